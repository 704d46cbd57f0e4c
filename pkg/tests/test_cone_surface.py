import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from conekahler.cone_surface import (EXCLUDED, SECTION_SCALE, GridFunction, SurfaceMetric,
                                     SurfaceSpec, admissible_delta, build_reference_metric,
                                     build_section_norm, cone_curvature, cone_mask, coordinates,
                                     distance, divisor_form_density, fill_cone_node, flat_metric,
                                     flat_section, gauss_curvature, integrate, lap5,
                                     lap5_fourth_order, laplacian, load_grid, radial_profile,
                                     ricci_density, save_grid, section_profile)


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(N=16, beta=0.5), dict(N=64, beta=1.0),
                                    dict(N=64, beta=0.5, r0=0.3), dict(N=64, beta=0.5, p=(0, 3))])
    def test_invariants(self, kw):
        with pytest.raises(ValueError):
            SurfaceSpec(**kw)

    def test_default_cone_point_and_coarsening(self):
        spec = SurfaceSpec(128, 0.5)
        assert spec.p == (64, 64)
        c = spec.coarsened()
        assert (c.N, c.p) == (64, (32, 32))
        with pytest.raises(ValueError):
            SurfaceSpec(130, 0.5).coarsened()

    def test_minimum_image_distance(self):
        spec = SurfaceSpec(64, 0.5)
        r = distance(spec)
        assert r[spec.p] == 0
        assert r.max() == pytest.approx(math.sqrt(0.5))
        x, y = coordinates(spec)
        assert x[1, 0] - x[0, 0] == pytest.approx(1 / 64)


class TestSection:
    def test_values(self):
        spec = SurfaceSpec(128, 0.5)
        s = build_section_norm(spec)
        r = distance(spec)
        assert s.values[spec.p] == 0
        assert np.all(s.values[r >= 2 * spec.r0] == 1)
        inner = r <= spec.r0
        np.testing.assert_allclose(s.values[inner], r[inner] / (SECTION_SCALE * spec.r0),
                                   rtol=1e-12)
        assert np.count_nonzero(s.values == 0) == 1

    def test_monotone_profile(self):
        r = np.linspace(0, 0.5, 2001)
        v = section_profile(r, 0.15)
        assert np.all(np.diff(v) >= 0)

    @pytest.mark.parametrize("N", [128, 256, 512])
    def test_c1_at_the_junctions(self, N):
        spec = SurfaceSpec(N, 0.5)
        r, v = radial_profile(build_section_norm(spec).values, spec)
        slope = np.diff(v) * N
        jump = np.abs(np.diff(slope))
        rj = r[1:-1]
        for R in (spec.r0, 2 * spec.r0):
            k = int(np.argmin(np.abs(rj - R)))
            assert jump[max(k - 1, 0):k + 2].max() < 10 / N

    def test_under_resolved_glue(self):
        with pytest.raises(ValueError, match="< 8"):
            build_section_norm(SurfaceSpec(32, 0.5, r0=0.2))

    def test_sigma_total_is_minus_two_pi(self):
        spec = SurfaceSpec(128, 0.6)
        sigma = divisor_form_density(build_section_norm(spec))
        assert sigma.sum() * spec.h**2 == pytest.approx(-2 * math.pi, abs=1e-12)
        assert np.all(divisor_form_density(flat_section(spec)) == 0)


class TestReferenceMetric:
    def test_area_and_delta_zero(self, ref128):
        spec, section, Omega, omega, delta = ref128
        assert omega.area() == pytest.approx(math.pi, rel=1e-2)
        zero = build_reference_metric(spec, 0.0, math.pi, section)
        np.testing.assert_array_equal(zero.density, Omega.density)

    def test_frozen_delta(self, ref128, ref256):
        assert ref128[4] == pytest.approx(0.06152906089233351, rel=1e-12)
        assert ref256[4] == pytest.approx(0.061408138707653465, rel=1e-12)

    def test_singular_part_exponent(self, ref256):
        # the flat summand dominates log rho at this delta; the delta i ddbar |s|^(2 beta)
        # summand carries the cone exponent
        spec, section, Omega, omega, delta = ref256
        r, extra = radial_profile(omega.density - Omega.density, spec)
        k = (r > spec.r0 / 4) & (r < spec.r0)
        slope = np.polyfit(np.log(r[k]), np.log(extra[k]), 1)[0]
        assert abs(slope - (2 * spec.beta - 2)) < 0.05

    def test_quasi_isometric_to_model(self, ref256):
        spec, section, Omega, omega, delta = ref256
        r, rho = radial_profile(omega.density, spec)
        k = (r > spec.r0 / 4) & (r < spec.r0)
        ratio = rho[k] / (delta * spec.beta**2 * r[k] ** (2 * spec.beta - 2))
        assert 1 / 50 < ratio.min() and ratio.max() < 50

    def test_positivity_failure_names_delta(self):
        spec = SurfaceSpec(64, 0.5)
        dmax = admissible_delta(spec, math.pi, safety=1.0)
        with pytest.raises(ValueError, match="delta=0.3"):
            build_reference_metric(spec, 0.3, math.pi)
        assert dmax < 0.3
        assert np.min(build_reference_metric(spec, 0.5 * dmax, math.pi).density) == pytest.approx(
            math.pi / 2, rel=1e-12)

    def test_gauss_bonnet_with_apex(self, ref128, ref256):
        for spec, section, Omega, omega, delta in (ref128, ref256):
            K = cone_curvature(omega, section)
            keep = np.isfinite(K)
            total = np.sum((K * omega.density)[keep]) * spec.h**2
            assert abs(total + 2 * math.pi * (1 - spec.beta)) < 5 / spec.N
            assert np.count_nonzero(~keep) == 1

    def test_ricci_density_off_collar(self, ref128):
        spec, section, Omega, omega, delta = ref128
        off = cone_mask(spec)
        K2 = gauss_curvature(omega)
        np.testing.assert_allclose((ricci_density(omega, section) / omega.density)[off], K2[off],
                                   atol=1e-9)


class TestLaplacian:
    def test_constants(self, ref128):
        omega = ref128[3]
        assert np.all(laplacian(omega, np.full(omega.density.shape, 3.0)) == 0)

    def test_divergence_theorem_and_symmetry(self, ref128, rng):
        omega = ref128[3]
        u, v = rng.standard_normal((2,) + omega.density.shape)
        assert abs(integrate(omega, laplacian(omega, u))) < 1e-10
        a = integrate(omega, laplacian(omega, u) * v)
        b = integrate(omega, u * laplacian(omega, v))
        assert abs(a - b) < 1e-10 * max(abs(a), 1)

    @pytest.mark.parametrize("N", [64, 128])
    def test_flat_eigenfunction(self, N):
        spec = SurfaceSpec(N, 0.5)
        m = flat_metric(spec, area=2.0)
        x, _ = coordinates(spec)
        u = np.sin(2 * math.pi * x)
        exact = -2 * math.pi**2 / m.density * u
        err = np.max(np.abs(laplacian(m, u) - exact))
        assert err < 2 * math.pi**4 / 3 / N**2 / 2.0 * 1.01

    def test_maximum_point_sign(self, rng):
        spec = SurfaceSpec(64, 0.5)
        m = flat_metric(spec)
        x, y = coordinates(spec)
        u = np.cos(2 * math.pi * x) * np.cos(2 * math.pi * y)
        assert laplacian(m, u)[0, 0] < 0


class TestIntegrate:
    def test_area(self, ref128):
        omega = ref128[3]
        assert integrate(omega, 1.0) == omega.area()

    @given(st.floats(-5, 5), st.floats(-5, 5))
    @settings(max_examples=25)
    def test_linear(self, a, b):
        spec = SurfaceSpec(32, 0.5)
        rng = np.random.default_rng(1)
        m = SurfaceMetric(spec, 1 + rng.uniform(size=(32, 32)))
        u, v = rng.standard_normal((2, 32, 32))
        lhs = integrate(m, a * u + b * v)
        assert lhs == pytest.approx(a * integrate(m, u) + b * integrate(m, v), abs=1e-12)

    def test_cone_density_refinement(self):
        beta = 0.75
        e = 2 * beta - 2
        exact = 8 * quad(lambda t: (0.5 / math.cos(t)) ** (e + 2) / (e + 2), 0, math.pi / 4)[0]
        errs = []
        for N in (64, 128, 256):
            spec = SurfaceSpec(N, beta)
            with np.errstate(divide="ignore"):
                dens = distance(spec) ** e
            dens[spec.p] = 0
            dens = fill_cone_node(dens, spec)
            errs.append(abs(dens.sum() * spec.h**2 - exact))
        assert errs[0] < 0.2 / 64
        assert errs[1] / errs[0] < 0.55 and errs[2] / errs[1] < 0.55


class TestCurvature:
    def test_flat(self):
        m = flat_metric(SurfaceSpec(64, 0.5), 3.0)
        assert np.nanmax(np.abs(gauss_curvature(m))) == 0

    def test_model_cone_off_apex(self):
        # the flat cone |z|^(2 beta - 2) |dz|^2 has K = 0 away from the apex;
        # the discrete value decays like h^2
        sup = []
        for N in (128, 256):
            spec = SurfaceSpec(N, 0.6)
            r = distance(spec)
            with np.errstate(divide="ignore"):
                dens = r ** (2 * spec.beta - 2)
            dens[spec.p] = 1.0
            K = gauss_curvature(SurfaceMetric(spec, dens))
            sup.append(np.max(np.abs(K[(r > spec.r0 / 2) & (r < 0.3)])))
        assert sup[1] < 0.03
        assert sup[0] / sup[1] == pytest.approx(4.0, rel=0.1)

    @pytest.mark.parametrize("order,rate", [(2, 4.0), (4, 16.0)])
    def test_conformal_oracle(self, order, rate):
        errs = []
        for N in (64, 128):
            spec = SurfaceSpec(N, 0.5)
            x, _ = coordinates(spec)
            psi = 0.1 * np.sin(2 * math.pi * x)
            m = SurfaceMetric(spec, np.exp(2 * psi))
            exact = -(-(2 * math.pi) ** 2 * psi) * np.exp(-2 * psi)  # -Lap(psi) e^{-2 psi}
            K = gauss_curvature(m, exclude_radius=0.0, order=order)
            keep = np.isfinite(K)
            errs.append(np.max(np.abs(K - exact)[keep]))
        assert errs[0] / errs[1] == pytest.approx(rate, rel=0.05)

    def test_fourth_order_stencil_on_polynomial_mode(self):
        N = 64
        spec = SurfaceSpec(N, 0.5)
        x, y = coordinates(spec)
        u = np.cos(2 * math.pi * x) + np.sin(4 * math.pi * y)
        exact = -(2 * math.pi) ** 2 * np.cos(2 * math.pi * x) - (4 * math.pi) ** 2 * np.sin(4 * math.pi * y)
        assert np.max(np.abs(lap5_fourth_order(u, spec.h) - exact)) < 0.05
        assert np.max(np.abs(lap5(u, spec.h) - exact)) > 0.3

    def test_collar_excluded(self, ref128):
        spec, section, Omega, omega, delta = ref128
        K = gauss_curvature(omega)
        r = distance(spec)
        assert np.all(np.isnan(K[r < spec.collar])) and np.all(np.isfinite(K[r >= spec.collar]))
        with pytest.raises(ValueError):
            gauss_curvature(omega, order=3)


class TestGridIO:
    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, (32, 32), elements=st.floats(-1e300, 1e300)))
    def test_bit_exact_round_trip(self, tmp_path_factory, values):
        spec = SurfaceSpec(32, 0.5, 0.2)
        path = tmp_path_factory.mktemp("grid") / "u.csv"
        save_grid(path, values, spec, t=0.25)
        g, spec2 = load_grid(path)
        assert spec2 == spec
        assert g.meta == {"t": 0.25}
        np.testing.assert_array_equal(g.values, values)

    def test_grid_function_checks(self):
        with pytest.raises(ValueError):
            GridFunction(np.full((4, 4), np.nan))
        with pytest.raises(ValueError):
            GridFunction(np.zeros((4, 4)), flag="weird")
        assert GridFunction(np.zeros((4, 4)), EXCLUDED).flag == EXCLUDED

    def test_metric_positivity(self):
        spec = SurfaceSpec(32, 0.5, 0.2)
        with pytest.raises(ValueError):
            SurfaceMetric(spec, np.zeros((32, 32)))

    def test_fill_cone_node(self):
        spec = SurfaceSpec(32, 0.5, 0.2)
        u = np.arange(32.0 * 32).reshape(32, 32)
        v = fill_cone_node(u, spec)
        i, j = spec.p
        assert v[i, j] == (u[i - 1, j] + u[i + 1, j] + u[i, j - 1] + u[i, j + 1]) / 4
