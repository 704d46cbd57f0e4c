import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conekahler.checks import random_local_data
from conekahler.cone_geometry import ConeParams
from conekahler.local_models import (LocalData, conformal_curvature_fd,
                                     coordinate_change_components, coordinate_change_exponent,
                                     curvature_unboundedness_scan, gaussian_curvature_Ka,
                                     holomorphic_sectional_curvature, reference_components,
                                     sturm_gamma, sturm_pullback)


def zero_jet(z1, beta, n=2):
    z = np.zeros(n, dtype=complex)
    z[0] = z1
    return LocalData(F=1.0, dF=np.zeros(n), ddF=np.zeros((n, n)), Omega=np.eye(n), z=z,
                     params=ConeParams(beta))


class TestReferenceComponents:
    def test_zero_jet_euclid(self):
        beta = 0.6
        z1 = 0.3 + 0.2j
        g = reference_components(zero_jet(z1, beta)).entries
        assert g[0, 0] == pytest.approx(abs(z1) ** (2 - 2 * beta) + beta**2)
        assert g[0, 1] == 0
        assert g[1, 1] == 1

    def test_axis_vanishing(self, rng):
        for _ in range(20):
            d = random_local_data(rng, 0.7)
            d.z[0] = 0
            g = reference_components(d).entries
            assert np.all(g[0, 1:] == 0) and np.all(g[1:, 0] == 0)
            assert g[0, 0] == pytest.approx(0.7**2 * d.delta * d.F)

    def test_positive_at_small_radius(self, rng):
        d = random_local_data(rng, 0.75)
        d.z[0] = 0.1
        g = reference_components(d)
        assert g.positive_definite and g.eigenvalues()[0] > 0
        assert g.flags["positive_definite"]

    def test_hermitian_and_continuous_to_axis(self, rng):
        beta = 0.75
        d = random_local_data(rng, beta)
        limit = reference_components(LocalData(d.F, d.dF, d.ddF, d.Omega,
                                               np.r_[0, d.z[1:]], d.params, d.delta)).entries
        for k in range(1, 12):
            r = 0.1 * 0.5**k
            dk = LocalData(d.F, d.dF, d.ddF, d.Omega, np.r_[r * np.exp(0.3j), d.z[1:]],
                           d.params, d.delta)
            g = reference_components(dk)
            assert g.hermitian_defect() < 1e-15
            scale = r ** min(1 - beta, 2 - 2 * beta)
            assert np.max(np.abs(g.entries - limit)) < 10 * scale

    def test_invalid_data(self):
        with pytest.raises(ValueError):
            LocalData(F=-1.0, dF=[0], ddF=[[0]], Omega=[[1]], z=[0.1], params=ConeParams(0.5))
        with pytest.raises(ValueError):
            LocalData(F=1.0, dF=[0], ddF=[[0]], Omega=[[-1]], z=[0.1], params=ConeParams(0.5))


class TestSturm:
    def test_matches_direct_formulas(self, rng):
        for beta in (0.3, 0.6, 0.9):
            for _ in range(100):
                d = random_local_data(rng, beta)
                direct = reference_components(d)
                if not direct.positive_definite:
                    continue
                np.testing.assert_allclose(sturm_pullback(d).entries, direct.entries,
                                           atol=1e-9, rtol=0)

    def test_branch_independent(self, rng):
        for _ in range(100):
            d = random_local_data(rng, 0.55)
            a = sturm_pullback(d, np.pi).entries
            b = sturm_pullback(d, -2.0).entries
            assert np.max(np.abs(a - b)) < 1e-12

    def test_beta_one_graph(self, rng):
        d = random_local_data(rng, 1.0)
        np.testing.assert_allclose(sturm_pullback(d).entries, reference_components(d).entries,
                                   atol=1e-12)

    def test_gamma_hermitian(self, rng):
        d = random_local_data(rng, 0.5)
        G = sturm_gamma(d, 0.3 - 0.2j)
        np.testing.assert_allclose(G, G.conj().T)

    def test_apex_uses_limit(self, rng):
        d = random_local_data(rng, 0.5)
        d.z[0] = 0
        np.testing.assert_array_equal(sturm_pullback(d).entries, reference_components(d).entries)


class TestKa:
    def test_trivial_zeros(self):
        assert gaussian_curvature_Ka(0.3, 0.0, 0.7) == 0
        assert gaussian_curvature_Ka(0.3, 0.5, 1.0) == 0

    def test_fd_oracle_single_point(self):
        beta, a, z = 0.75, 0.5, 0.2
        lam = lambda zz: a + abs(zz) ** (2 * beta - 2)
        K = gaussian_curvature_Ka(z, a, beta)
        # truncation error ~ step^2: 3e-6 at step 1e-4, 2.2e-7 at 3e-5
        fd = conformal_curvature_fd(lam, complex(z), step=3e-5)
        assert abs(fd - K) / abs(K) < 1e-6

    def test_frozen_value(self):
        # -2 (beta-1)^2 a r^(2-4 beta) / (1 + a r^(2-2 beta))^3 at beta=0.75, a=0.5, r=0.2
        assert gaussian_curvature_Ka(0.2, 0.5, 0.75) == pytest.approx(-0.17057853435725476, rel=1e-12)

    @given(st.floats(0.51, 0.99), st.floats(-0.99, 0.99).filter(lambda a: abs(a) > 1e-3),
           st.floats(1e-4, 0.99), st.floats(0, 6.28))
    def test_sign_opposite_to_a(self, beta, a, r, t):
        K = gaussian_curvature_Ka(r * np.exp(1j * t), a, beta)
        assert np.sign(K) == -np.sign(a)

    def test_errors(self):
        with pytest.raises(ValueError):
            gaussian_curvature_Ka(0.0, 0.5, 0.7)
        with pytest.raises(ValueError):
            gaussian_curvature_Ka(0.1, 1.0, 0.7)


class TestScan:
    radii = 10.0 ** -np.arange(1, 7)

    def test_diverges_below(self):
        rep = curvature_unboundedness_scan(0.5, 0.75, self.radii)
        assert rep.verdict == "diverges to -inf"
        assert np.all(np.diff(rep.values) < 0) and rep.values[-1] < -1e3

    def test_diverges_above(self):
        rep = curvature_unboundedness_scan(-0.5, 0.75, self.radii)
        assert rep.verdict == "diverges to +inf"
        assert np.all(rep.values > 0)

    def test_zero_and_out_of_range(self):
        assert np.all(curvature_unboundedness_scan(0.0, 0.75, self.radii).values == 0)
        assert "no divergence" in curvature_unboundedness_scan(0.5, 0.5, self.radii).verdict


class TestCoordinateChange:
    def test_identity_values(self):
        g = coordinate_change_components(np.eye(2), 0.25, 0.5).entries
        np.testing.assert_allclose(g, [[1.25, 0.5], [0.5, 1.0]])

    def test_axis_identity(self, rng):
        X = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        gt = X @ X.conj().T + np.eye(2)
        np.testing.assert_allclose(coordinate_change_components(gt, 0, 0.6).entries, gt)

    def test_exponent(self):
        assert abs(coordinate_change_exponent(0.75).exponent - 1 / 3) < 0.05

    def test_needs_n2(self):
        with pytest.raises(ValueError):
            coordinate_change_components(np.eye(3), 0.1, 0.5)


class TestSectional:
    def test_conformal_case_is_half_gauss(self):
        lam = lambda z: 1 + 0.3 * abs(z) ** 2
        z = 0.4 + 0.1j
        H = holomorphic_sectional_curvature(lambda w: np.array([[lam(w[0])]]), [z], [1.0])
        K = conformal_curvature_fd(lam, z)
        assert H == pytest.approx(K / 2, rel=1e-5)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 0.6), st.floats(0, 6.28))
    def test_pullback_bounded_above_by_ambient(self, r, t):
        # n = 1, F = 1, Omega = 1: omega = (1 + beta^2 |z|^(2beta-2)) |dz|^2 is the
        # pull-back of the flat Gamma on C^2; its curvature is <= 0 = sup of Gamma's.
        beta = 0.7
        lam = lambda z: 1 + beta**2 * abs(z) ** (2 * beta - 2)
        H = holomorphic_sectional_curvature(lambda w: np.array([[lam(w[0])]]),
                                            [r * np.exp(1j * t)], [1.0])
        assert H <= 0 + 1e-3
