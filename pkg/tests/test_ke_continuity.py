import json
import math

import numpy as np
import pytest

from conekahler.cone_surface import (SurfaceMetric, SurfaceSpec, flat_metric, gauss_curvature,
                                     lap5, load_grid, save_grid)
from conekahler.ke_continuity import (CHERNLU_TOL, ContinuityState, KEProblem, continuity_step,
                                      initial_functional, initial_metric, ke_solve, monitors,
                                      omega_potential, path_residual, prepare,
                                      ricci_identity_residual)
from conekahler.ricci_bound import SmoothingParams, grid_holder_seminorm, lowpass


def holder_of_lap(res):
    setup = res.setup
    u1 = res.states[-1].u
    lap = 0.5 * lap5(u1, setup.omega.spec.h) / setup.omega0.density
    return grid_holder_seminorm(lap, setup.omega.spec, setup.problem.alpha)


class TestProblem:
    @pytest.mark.parametrize("sched", [(0.0,), (0.1, 1.0), (0.0, 0.5, 0.5, 1.0), (0.0, 0.9)])
    def test_schedule(self, sched):
        with pytest.raises(ValueError, match="schedule"):
            KEProblem(SurfaceSpec(64, 0.5), schedule=sched)

    def test_other_invariants(self):
        spec = SurfaceSpec(64, 0.5)
        for kw in (dict(newton_tol=0.0), dict(max_iter=0), dict(delta=-1.0)):
            with pytest.raises(ValueError):
                KEProblem(spec, **kw)
        prob = KEProblem(spec)
        assert prob.Omega_area == math.pi
        assert len(prob.schedule) == 11
        assert prob.alpha == pytest.approx(0.9)


class TestRicciPotential:
    def test_cohomology_normalization(self, ke128):
        setup = ke128.setup
        assert abs(setup.Omega.area() - 2 * math.pi * (1 - 0.5)) < 1e-8
        wrong = flat_metric(setup.omega.spec, 3.0)
        with pytest.raises(ValueError, match="cohomology normalization violated"):
            omega_potential(wrong, setup.section)

    def test_identity(self, ke128, ke256):
        for res in (ke128, ke256):
            r = ricci_identity_residual(res.setup.omega, res.setup.f)
            assert np.nanmax(np.abs(r)) < 0.02
        # exact for the 5-point operator: roundoff floor at both levels
        assert np.nanmax(np.abs(ricci_identity_residual(ke256.setup.omega, ke256.setup.f))) < 1e-9

    def test_f_bounded(self, ke128, ke256):
        a = np.max(np.abs(ke128.setup.f))
        b = np.max(np.abs(ke256.setup.f))
        assert a == pytest.approx(1.8998, rel=1e-4)
        assert abs(b / a - 1) < 0.05


class TestInitialMetric:
    def test_band_limited_f(self, ke128):
        setup = ke128.setup
        sp = setup.problem.smoothing()
        f = lowpass(setup.f, sp.cutoff / 2)
        omega0, f0, phi, hist = initial_metric(setup.omega, f, sp)
        assert np.max(np.abs(phi)) < 1e-12
        assert np.max(np.abs(omega0.density - setup.omega.density)) < 1e-10

    def test_functional_at_zero(self, ke128):
        omega = ke128.setup.omega
        assert np.all(initial_functional(omega, np.zeros((128, 128))) == 0)

    def test_newton(self, ke128, ke256):
        for res in (ke128, ke256):
            hist = res.setup.initial_residuals
            assert hist[-1] < 1e-8 and len(hist) - 1 <= 10
        np.testing.assert_allclose(ke128.setup.initial_residuals[:3], [0.271, 0.0308, 4.5e-4],
                                   rtol=0.02)

    def test_start_metric_identity(self, ke128):
        # Ric(omega_0) = -omega_0 + i ddbar f_0 off the collar
        setup = ke128.setup
        r = ricci_identity_residual(setup.omega0, setup.f0)
        assert np.nanmax(np.abs(r)) < 1e-6


class TestPath:
    def test_start(self, ke128):
        s0 = ke128.states[0]
        assert s0.t == 0.0 and s0.iterations == 0 and np.all(s0.u == 0)

    def test_steps_and_residuals(self, ke256):
        assert ke256.accepted_steps <= 20
        tol = ke256.setup.problem.newton_tol
        for st in ke256.states:
            r = np.max(np.abs(path_residual(ke256.setup.omega0, ke256.setup.f0, st.t, st.u)))
            assert r == st.residual and r < tol
        assert ke256.final_residual < 1e-8

    def test_quadratic_tail(self, ke128, ke256):
        for res in (ke128, ke256):
            for st in res.states[1:]:
                r = st.residuals
                assert len(r) >= 3 and r[-1] / r[-2] < 0.1

    def test_warm_start(self, ke256):
        # the t = 0 start is not a Newton solve, so warm starting applies from t_1 on
        its = [st.iterations for st in ke256.states[1:]]
        assert its[0] <= 3
        assert all(b <= a + 2 for a, b in zip(its, its[1:]))

    def test_single_step_agrees(self, ke128):
        a, b = ke128.states[3], ke128.states[4]
        new = continuity_step(a, b.t, ke128.setup)
        np.testing.assert_array_equal(new.u, b.u)

    def test_final_equation(self, ke128):
        m = ke128.omega_KE
        K = gauss_curvature(m)
        assert np.nanmax(np.abs(K + 1)) < 1e-6
        assert m.area() == pytest.approx(math.pi, rel=1e-10)


class TestMonitors:
    def test_c0_at_start(self, ke128):
        mon = ke128.states[0].monitors
        assert mon.sup_u == 0 and mon.c0_bound == pytest.approx(0.2039, abs=1e-4)

    @pytest.mark.parametrize("which", ["ke128", "ke256"])
    def test_every_step(self, which, request):
        res = request.getfixturevalue(which)
        for st in res.states:
            m = st.monitors
            assert m.c0_ok
            assert m.chernlu_residual >= -CHERNLU_TOL and m.chernlu_min >= -CHERNLU_TOL
            assert m.C_upper * m.C_lower >= 1 and np.isfinite([m.C_upper, m.C_lower]).all()
            assert m.distortion < 50
            assert m.A == pytest.approx(m.C2 + 2 * m.C3 + 1)

    def test_as_dict(self, ke128):
        d = ke128.states[-1].monitors.as_dict()
        assert set(d) == {"t", "c0", "chernlu", "equivalence", "holder"}
        assert d["chernlu"]["C1"] == 1.0
        json.dumps(d)

    def test_holder_stable(self, ke128, ke256):
        a, b = holder_of_lap(ke128), holder_of_lap(ke256)
        assert a == pytest.approx(19.12, rel=1e-3)
        assert 1 / 1.5 < b / a < 1.5


class TestFrozen:
    def test_n128(self, ke128):
        s = ke128.setup
        assert s.delta == pytest.approx(0.06152906089233351, rel=1e-12)
        assert s.C2 == pytest.approx(275.46624688075855, rel=1e-9)
        assert s.C3 == pytest.approx(270.99077467129416, rel=1e-9)
        assert s.A == pytest.approx(818.4477962233468, rel=1e-9)
        assert np.median(ke128.curvature_error()) == pytest.approx(1.467514571009687e-4, rel=1e-6)

    def test_n256(self, ke256):
        s = ke256.setup
        assert s.delta == pytest.approx(0.061408138707653465, rel=1e-12)
        assert s.C2 == pytest.approx(277.69828288287096, rel=1e-9)
        assert s.C3 == pytest.approx(290.848035564392, rel=1e-9)
        assert s.A == pytest.approx(860.394354011655, rel=1e-9)
        assert np.median(ke256.curvature_error()) == pytest.approx(3.666339713537248e-5, rel=1e-6)


def test_schedule_independence(ke128):
    prob = KEProblem(SurfaceSpec(128, 0.5), schedule=(0, 0.05, 0.15, 0.3, 0.5, 0.7, 0.85, 1.0))
    alt = ke_solve(prob, setup=ke128.setup)
    assert np.max(np.abs(alt.u - ke128.u)) < 1e-6


@pytest.fixture(scope="module")
def prob64():
    return KEProblem(SurfaceSpec(64, 0.5))


@pytest.fixture(scope="module")
def setup64(prob64):
    return prepare(prob64)


class TestCheckpoint:
    def test_resume_bit_exact(self, tmp_path, prob64, setup64):
        full = ke_solve(prob64, checkpoint_dir=tmp_path / "a", setup=setup64)
        d = tmp_path / "b"
        ke_solve(prob64, checkpoint_dir=d, setup=setup64)
        man = json.loads((d / "manifest.json").read_text())
        man["states"] = man["states"][:4]
        (d / "manifest.json").write_text(json.dumps(man))
        lines = []
        resumed = ke_solve(prob64, checkpoint_dir=d, resume=True, setup=setup64, log=lines.append)
        assert len(lines) == len(full.states) - 4
        np.testing.assert_array_equal(resumed.u, full.u)
        assert [s.residual for s in resumed.states] == [s.residual for s in full.states]

    def test_mismatched_problem(self, tmp_path, prob64, setup64):
        ke_solve(prob64, checkpoint_dir=tmp_path, setup=setup64)
        other = KEProblem(SurfaceSpec(64, 0.5), schedule=(0.0, 0.5, 1.0))
        with pytest.raises(ValueError, match="different problem"):
            ke_solve(other, checkpoint_dir=tmp_path, resume=True, setup=setup64)

    def test_tampered_grid(self, tmp_path, prob64, setup64):
        ke_solve(prob64, checkpoint_dir=tmp_path, setup=setup64)
        g, spec = load_grid(tmp_path / "u_002.csv")
        save_grid(tmp_path / "u_002.csv", g.values + 1e-9, spec, **g.meta)
        with pytest.raises(ValueError, match="re-evaluated residual"):
            ke_solve(prob64, checkpoint_dir=tmp_path, resume=True, setup=setup64)
