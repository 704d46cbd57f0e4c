"""Verification suites behind the CLI commands.

Each suite takes a validated parameter dict and returns a SuiteResult: named
pass/fail checks with the measured values, tracked quantities for refinement
comparisons, grids for CSV output and short series for tables and plots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cone_geometry import ConeParams, holder_exponent_fit, radial_samples
from .cone_surface import (SurfaceSpec, admissible_delta, build_reference_metric,
                           build_section_norm, cone_curvature, flat_metric, radial_profile)
from .errors import CokernelObstruction
from .ke_continuity import KEProblem, ke_solve
from .linear_solver import (LinearProblem, fredholm_diagnostics, residual_norm, solve_poisson,
                            solve_shifted)
from .local_models import (LocalData, conformal_curvature_fd, coordinate_change_exponent,
                           gaussian_curvature_Ka, reference_components, sturm_pullback)
from .ricci_bound import (MAFunctionalContext, SmoothingParams, flatten_ricci,
                          ricci_potential_F, smooth_approximation)

# expectations understood by compare()
HALVING = "halving"      # fine / coarse <= 0.65
STABLE = "stable"        # |fine / coarse - 1| < 0.1
GROWTH = "growth"        # fine / coarse > 1.5
UNTRACKED = "none"


@dataclass
class Check:
    name: str
    passed: bool
    measured: object
    threshold: object
    note: str = ""

    def as_dict(self) -> dict:
        d = {"name": self.name, "passed": bool(self.passed), "measured": _plain(self.measured),
             "threshold": _plain(self.threshold)}
        if self.note:
            d["note"] = self.note
        return d


@dataclass
class SuiteResult:
    checks: list = field(default_factory=list)
    tracked: dict = field(default_factory=dict)     # name -> (value, expectation)
    grids: dict = field(default_factory=dict)       # file stem -> (array, SurfaceSpec)
    series: dict = field(default_factory=dict)      # file stem -> {column: list}
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, measured, threshold, note=""):
        self.checks.append(Check(name, bool(passed), measured, threshold, note))

    def track(self, name, value, expect=UNTRACKED):
        self.tracked[name] = {"value": _plain(value), "expect": expect}


def _plain(x):
    """JSON-friendly copy (numpy scalars and arrays to Python)."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    return x


# -- verify-local ---------------------------------------------------------------------

def curvature_oracle(beta: float, a: float, rng, points: int = 100,
                     r_min: float = 0.05, r_max: float = 0.5) -> np.ndarray:
    """Relative error of K_a against the finite-difference conformal oracle."""
    r = rng.uniform(r_min, r_max, points)
    z = r * np.exp(2j * np.pi * rng.uniform(size=points))
    lam = lambda zz: a + abs(zz) ** (2 * beta - 2)
    exact = gaussian_curvature_Ka(z, a, beta)
    # step 3e-4 |z| balances truncation (step/|z|)^2 against roundoff in log lam
    fd = np.array([conformal_curvature_fd(lam, complex(zz), step=3e-4 * abs(zz)) for zz in z])
    return np.abs(fd - exact) / np.abs(exact)


def random_local_data(rng, beta: float, n: int = 2, radius: float = 0.5) -> LocalData:
    """Random jets with F > 0 and Omega positive definite; z1 != 0."""
    def herm(scale):
        X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        return scale * 0.5 * (X + X.conj().T)
    z = radius * (rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n))
    z[0] = radius * math.sqrt(rng.uniform(0.01, 1)) * np.exp(2j * np.pi * rng.uniform())
    return LocalData(F=rng.uniform(0.5, 2.0),
                     dF=0.5 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)),
                     ddF=herm(0.2), Omega=np.eye(n) + herm(0.1), z=z,
                     params=ConeParams(beta), delta=rng.uniform(0.2, 1.0))


def sturm_errors(beta: float, rng, points: int = 1000, cuts=(np.pi, 0.7)):
    """(identity error, branch spread, admissible count) over random admissible points."""
    ident, spread, used = 0.0, 0.0, 0
    while used < points:
        d = random_local_data(rng, beta)
        direct = reference_components(d)
        if not direct.flags["positive_definite"]:
            continue
        pulled = [sturm_pullback(d, c).entries for c in cuts]
        ident = max(ident, abs(pulled[0] - direct.entries).max())
        spread = max(spread, max(abs(p - pulled[0]).max() for p in pulled[1:]))
        used += 1
    return float(ident), float(spread), used


def suite_local(p: dict) -> SuiteResult:
    out = SuiteResult()
    rng = np.random.default_rng(p["seed"])
    rows = {"beta": [], "a": [], "max_rel_error": []}
    for beta in p["betas"]:
        for a in p["a_values"]:
            err = curvature_oracle(beta, a, rng, p["points"])
            worst = float(err.max())
            rows["beta"].append(beta)
            rows["a"].append(a)
            rows["max_rel_error"].append(worst)
            out.add(f"curvature_oracle beta={beta:g} a={a:g}", worst < p["tol_curvature"],
                    worst, p["tol_curvature"], f"{p['points']} points")
    out.series["curvature_oracle"] = rows
    for beta in p["betas"]:
        ident, spread, used = sturm_errors(beta, rng, p["sturm_points"])
        out.add(f"sturm_identity beta={beta:g}", ident < p["tol_sturm"], ident, p["tol_sturm"],
                f"{used} admissible points")
        out.add(f"sturm_branch beta={beta:g}", spread < p["tol_branch"], spread, p["tol_branch"])
    return out


# -- verify-geometry ------------------------------------------------------------------

def suite_geometry(p: dict) -> SuiteResult:
    out = SuiteResult()
    rows = {"beta": [], "expected": [], "power_exponent": [], "coordinate_change_exponent": []}
    for beta in p["betas"]:
        expected = 1 / beta - 1
        r, inc = radial_samples(beta, lambda z: np.abs(z) ** (1 - beta), count=p["count"])
        e1 = holder_exponent_fit(r, inc).exponent
        e2 = coordinate_change_exponent(beta, count=p["count"]).exponent
        for label, e in (("power", e1), ("coordinate_change", e2)):
            out.add(f"holder_exponent {label} beta={beta:g}", abs(e - expected) <= p["exponent_tol"],
                    e, {"expected": expected, "tol": p["exponent_tol"]})
        for key, v in zip(rows, (beta, expected, e1, e2)):
            rows[key].append(v)
    out.series["holder_exponents"] = rows
    return out


# -- shared reference surface ---------------------------------------------------------

def reference_surface(beta: float, N: int, r0: float = 0.15, delta: float | None = None):
    """(spec, section, Omega, omega, delta) with Omega flat of area 2 pi (1 - beta)."""
    spec = SurfaceSpec(N, beta, r0)
    section = build_section_norm(spec)
    area = 2 * math.pi * (1 - beta)
    Omega = flat_metric(spec, area)
    delta = admissible_delta(spec, area, section) if delta is None else delta
    omega = build_reference_metric(spec, delta, area, section)
    return spec, section, Omega, omega, delta


# -- solve-linear ---------------------------------------------------------------------

def suite_linear(p: dict) -> SuiteResult:
    out = SuiteResult()
    spec, section, Omega, omega, delta = reference_surface(p["beta"], p["N"], p["r0"], p["delta"])
    rep = fredholm_diagnostics(omega)
    out.add("kernel_dim", rep.kernel_dim == 1, rep.kernel_dim, 1)
    out.add("cokernel_dim", rep.cokernel_dim == 1, rep.cokernel_dim, 1)
    out.add("cokernel_is_density", rep.cokernel_alignment > 1 - 1e-8, rep.cokernel_alignment,
            "> 1 - 1e-8")
    out.extra["fredholm"] = rep.as_dict()
    out.track("smallest_nonzero_eigenvalue", rep.smallest_nonzero, STABLE)

    rng = np.random.default_rng(p["seed"])
    worst, worst_shift = 0.0, 0.0
    for _ in range(p["trials"]):
        h = rng.standard_normal((spec.N, spec.N))
        h -= np.sum(omega.density * h) / np.sum(omega.density)
        prob = LinearProblem(omega, h)
        u = solve_poisson(prob)
        worst = max(worst, residual_norm(prob, u) / np.max(np.abs(h)))
        sprob = LinearProblem(omega, h, shift=1.0)
        us = solve_shifted(sprob)
        worst_shift = max(worst_shift, residual_norm(sprob, us) / np.max(np.abs(h)))
    out.add("poisson_residual", worst < p["tol"], worst, p["tol"],
            f"max over {p['trials']} mean-zero right-hand sides, relative to |h|_inf")
    out.add("shifted_residual", worst_shift < p["tol"], worst_shift, p["tol"], "shift c = 1")
    rejected = 0
    for _ in range(p["trials"]):
        h = 1.0 + 0.1 * rng.standard_normal((spec.N, spec.N))
        try:
            solve_poisson(LinearProblem(omega, h))
        except CokernelObstruction:
            rejected += 1
    out.add("non_mean_zero_rejected", rejected == p["trials"], rejected, p["trials"])
    out.extra["delta"] = delta
    return out


# -- flatten-ricci --------------------------------------------------------------------

def flatten_level(beta: float, N: int, r0: float, delta, sp: SmoothingParams) -> dict:
    spec, section, Omega, omega, delta = reference_surface(beta, N, r0, delta)
    F = ricci_potential_F(omega, Omega, section)
    split = smooth_approximation(F, sp, omega)
    ctx = MAFunctionalContext(omega, bound=sp.eps)
    res = flatten_ricci(ctx, split.h, sp)
    m_phi = omega.with_potential(res.phi, "flattened")
    K_raw = cone_curvature(omega, section)
    K_phi = cone_curvature(m_phi, section)
    return {
        "spec": spec, "delta": delta, "phi": res.phi, "K_phi": K_phi, "K_raw": K_raw,
        "sup_K_phi": float(np.nanmax(np.abs(K_phi))), "sup_K_raw": float(np.nanmax(np.abs(K_raw))),
        "volume_error": abs(m_phi.area() - omega.area()) / omega.area(),
        "iterations": res.iterations, "residuals": res.residuals, "proxy": res.proxy,
        "h_norm": split.norm, "certificate": split.certificate.ok,
    }


def suite_flatten(p: dict) -> SuiteResult:
    out = SuiteResult()
    sp = SmoothingParams.for_beta(p["beta"], eps=p["eps"], mu=p["mu"],
                                  mollifier_scale=p["mollifier_scale"])
    levels = [p["N"], 2 * p["N"]] if p["refine"] else [p["N"]]
    runs = [flatten_level(p["beta"], N, p["r0"], p["delta"], sp) for N in levels]
    for run in runs:
        N = run["spec"].N
        out.add(f"newton_iterations N={N}", run["iterations"] <= p["max_newton"], run["iterations"],
                p["max_newton"])
        out.add(f"volume N={N}", run["volume_error"] < p["volume_tol"], run["volume_error"],
                p["volume_tol"], "relative to v")
        out.add(f"smoothness_certificate N={N}", run["certificate"], run["certificate"], True)
        out.grids[f"phi_N{N}"] = (run["phi"], run["spec"])
        d, kphi = radial_profile(run["K_phi"], run["spec"])
        _, kraw = radial_profile(run["K_raw"], run["spec"])
        out.series[f"curvature_profile_N{N}"] = {"r": d, "K_flattened": kphi, "K_reference": kraw}
        out.series[f"newton_residuals_N{N}"] = {"iteration": list(range(len(run["residuals"]))),
                                                "residual": run["residuals"]}
    base = runs[0]
    out.track("sup_K_flattened", base["sup_K_phi"], STABLE)
    out.track("sup_K_reference", base["sup_K_raw"], GROWTH)
    out.track("h_norm", base["h_norm"])
    if p["refine"]:
        a, b = runs
        change = abs(b["sup_K_phi"] / a["sup_K_phi"] - 1)
        growth = b["sup_K_raw"] / a["sup_K_raw"] - 1
        out.add("flattened_curvature_stable", change < p["stable_tol"], change, p["stable_tol"],
                f"sup|K| {a['sup_K_phi']:.6g} -> {b['sup_K_phi']:.6g}")
        out.add("reference_curvature_grows", growth > p["growth_min"], growth, p["growth_min"],
                f"sup|K| {a['sup_K_raw']:.6g} -> {b['sup_K_raw']:.6g}")
    out.extra["levels"] = [{k: _plain(v) for k, v in r.items()
                            if k in ("delta", "sup_K_phi", "sup_K_raw", "volume_error",
                                     "iterations", "proxy", "h_norm")} | {"N": r["spec"].N}
                           for r in runs]
    return out


# -- solve-ke ---------------------------------------------------------------------------

def ke_problem(p: dict, N: int, schedule) -> KEProblem:
    return KEProblem(SurfaceSpec(N, p["beta"], p["r0"]), delta=p["delta"], schedule=schedule,
                     newton_tol=p["newton_tol"], max_iter=p["max_newton"],
                     mollifier_scale=p["mollifier_scale"], eps=p["eps"])


def ke_summary(res) -> dict:
    err = res.curvature_error()
    mons = [s.monitors for s in res.states]
    return {
        "steps": res.accepted_steps, "final_residual": res.final_residual,
        "median_abs_K_plus_1": float(np.median(err)), "max_abs_K_plus_1": float(np.max(err)),
        "area": res.omega_KE.area(), "monitors": mons,
        "max_distortion": max(m.distortion for m in mons),
    }


def suite_ke(p: dict, checkpoint_dir=None, resume: bool = False, log=None) -> SuiteResult:
    out = SuiteResult()
    prob = ke_problem(p, p["N"], p["schedule"])
    res = ke_solve(prob, checkpoint_dir=checkpoint_dir, resume=resume, log=log)
    s = ke_summary(res)
    N = p["N"]
    target = prob.Omega_area
    out.add("accepted_steps", s["steps"] <= p["max_steps"], s["steps"], p["max_steps"])
    out.add("final_path_residual", s["final_residual"] < p["residual_tol"], s["final_residual"],
            p["residual_tol"])
    out.add("median_abs_K_plus_1", s["median_abs_K_plus_1"] < p["curvature_tol"],
            s["median_abs_K_plus_1"], p["curvature_tol"],
            "fourth-order curvature stencil, nodes with |z - p| > 4 r0")
    area_err = abs(s["area"] - target) / target
    out.add("area_identity", area_err < p["area_tol"], area_err, p["area_tol"],
            f"area {s['area']:.12g} vs 2 pi (1 - beta) = {target:.12g}")
    c0 = [m.sup_u - (m.c0_bound + m.c0_slack) for m in s["monitors"]]
    out.add("c0_monitor", all(m.c0_ok for m in s["monitors"]), max(c0), "<= 0",
            "max over steps of sup u - (max(-inf f0, 0) + 10/N)")
    cl = [m.chernlu_residual for m in s["monitors"]]
    out.add("chern_lu_monitor", min(cl) >= -p["chernlu_tol"], min(cl), -p["chernlu_tol"],
            "min over steps of the residual at the trace maximum off the collar")
    out.add("metric_equivalence", s["max_distortion"] < p["distortion_max"], s["max_distortion"],
            p["distortion_max"], "max over steps of C_upper * C_lower")
    out.track("median_abs_K_plus_1", s["median_abs_K_plus_1"], HALVING)
    out.track("area", s["area"], STABLE)
    out.track("max_distortion", s["max_distortion"], STABLE)
    out.track("sup_u_final", float(res.states[-1].u.max()), STABLE)
    out.track("final_residual", s["final_residual"])
    out.grids[f"u_KE_N{N}"] = (res.u, prob.spec)
    out.grids[f"density_KE_N{N}"] = (res.omega_KE.density, prob.spec)
    cols = ["t", "sup_u", "c0_bound", "chernlu_residual", "chernlu_min", "trace_max",
            "C_lower", "C_upper", "holder_fine", "holder_coarse"]
    out.series[f"monitors_N{N}"] = {c: [getattr(m, c) for m in s["monitors"]] for c in cols}
    out.series[f"newton_N{N}"] = {"t": [st.t for st in res.states],
                                  "iterations": [st.iterations for st in res.states],
                                  "residual": [st.residual for st in res.states]}
    out.extra["delta"] = res.setup.delta
    out.extra["steps"] = [m.as_dict() for m in s["monitors"]]

    if p["refine"]:
        fine = ke_summary(ke_solve(ke_problem(p, 2 * N, p["schedule"]), log=log))
        ratio = fine["median_abs_K_plus_1"] / s["median_abs_K_plus_1"]
        out.add("curvature_error_halves", ratio <= 0.5, ratio, 0.5,
                f"median |K+1| {s['median_abs_K_plus_1']:.4g} (N={N}) -> "
                f"{fine['median_abs_K_plus_1']:.4g} (N={2 * N})")
        out.extra["refined"] = {k: _plain(v) for k, v in fine.items() if k != "monitors"}
    if p["alt_schedule"] is not None:
        alt = ke_solve(ke_problem(p, N, p["alt_schedule"]), log=log)
        diff = float(np.max(np.abs(alt.u - res.u)))
        out.add("schedule_independence", diff < p["schedule_tol"], diff, p["schedule_tol"],
                f"{len(p['schedule'])} vs {len(p['alt_schedule'])} schedule points")
    return out


SUITES = {
    "verify-local": suite_local,
    "verify-geometry": suite_geometry,
    "solve-linear": suite_linear,
    "flatten-ricci": suite_flatten,
    "solve-ke": suite_ke,
}
