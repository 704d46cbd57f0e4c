"""Kahler-Einstein cone metric (Einstein constant -1) by the continuity method.

Pipeline: reference metric omega -> Ricci potential f with
Ric(omega) = -omega + i ddbar f off D -> a smooth-start metric omega_0 = omega_phi
solving log(omega_phi / omega) - phi = f - f_0 with f_0 a mollified f ->
the path

    omega_0 + i ddbar u = e^{t f_0 + u} omega_0,   t in [0, 1],

which in one complex dimension reads 1 + Delta_0 u = e^{t f_0 + u}.  At t = 1,
u = phi + u_1 gives Ric(omega + i ddbar u) = -(omega + i ddbar u).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cone_surface import (DivisorSection, SurfaceMetric, SurfaceSpec, admissible_delta,
                           build_reference_metric, build_section_norm, cone_mask, divisor_form_density,
                           fill_cone_node, flat_metric, gauss_curvature, lap5, load_grid,
                           save_grid)
from .errors import AdmissibilityError, ConvergenceError
from .linear_solver import LinearProblem, poisson_fft, solve_shifted, solve_spd
from .ricci_bound import (SmoothingParams, lowpass, potential_proxy,
                          smoothness_certificate)

MAX_BISECTIONS = 6
CHERNLU_TOL = 1e-3


@dataclass
class KEProblem:
    spec: SurfaceSpec
    delta: float | None = None              # None: admissible_delta(spec, area)
    schedule: tuple = tuple(np.linspace(0.0, 1.0, 11))
    newton_tol: float = 1e-9
    max_iter: int = 20
    mollifier_scale: float = 1 / 16
    eps: float = 50.0
    holder_alpha: float | None = None       # default 0.9 (1/beta - 1), capped at 0.9

    def __post_init__(self):
        t = np.asarray(self.schedule, dtype=float)
        if t.size < 2 or t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
            raise ValueError("schedule must increase strictly from 0 to 1")
        self.schedule = tuple(float(v) for v in t)
        if self.newton_tol <= 0 or self.max_iter < 1:
            raise ValueError("newton_tol must be positive and max_iter at least 1")
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta must be non-negative")

    @property
    def Omega_area(self) -> float:
        return 2 * math.pi * (1 - self.spec.beta)

    @property
    def alpha(self) -> float:
        if self.holder_alpha is not None:
            return self.holder_alpha
        return min(0.9 * (1 / self.spec.beta - 1), 0.9)

    def smoothing(self) -> SmoothingParams:
        return SmoothingParams(alpha_prime=self.alpha, eps=self.eps,
                               mollifier_scale=self.mollifier_scale)


@dataclass
class MonitorReport:
    t: float
    sup_u: float
    c0_bound: float
    c0_slack: float
    A: float
    C2: float
    C3: float
    trace_max: float
    chernlu_residual: float
    chernlu_node: tuple
    chernlu_min: float      # smallest LHS - RHS over all nodes off the collar
    C_lower: float          # max omega / omega_t
    C_upper: float          # max omega_t / omega
    holder_fine: float
    holder_coarse: float

    @property
    def c0_ok(self) -> bool:
        return self.sup_u <= self.c0_bound + self.c0_slack

    @property
    def chernlu_ok(self) -> bool:
        return self.chernlu_residual >= -CHERNLU_TOL

    @property
    def distortion(self) -> float:
        """C_upper * C_lower = max(omega_t / omega) / min(omega_t / omega)."""
        return self.C_upper * self.C_lower

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "c0": {"sup_u": self.sup_u, "bound": self.c0_bound, "slack": self.c0_slack,
                   "ok": self.c0_ok},
            "chernlu": {"A": self.A, "C1": 1.0, "C2": self.C2, "C3": self.C3,
                        "trace_max": self.trace_max, "residual": self.chernlu_residual,
                        "node": list(self.chernlu_node), "min_off_collar": self.chernlu_min,
                        "ok": self.chernlu_ok},
            "equivalence": {"C_lower": self.C_lower, "C_upper": self.C_upper,
                            "distortion": self.distortion},
            "holder": {"fine": self.holder_fine, "coarse": self.holder_coarse},
        }


@dataclass
class ContinuityState:
    t: float
    u: np.ndarray
    residuals: list = field(default_factory=list)
    monitors: MonitorReport | None = None

    @property
    def iterations(self) -> int:
        return max(len(self.residuals) - 1, 0)

    @property
    def residual(self) -> float:
        return self.residuals[-1]


@dataclass
class KESetup:
    """Everything fixed before the path starts."""

    problem: KEProblem
    section: DivisorSection
    Omega: SurfaceMetric
    omega: SurfaceMetric
    delta: float
    F_Omega: np.ndarray
    f: np.ndarray
    f0: np.ndarray
    phi: np.ndarray
    omega0: SurfaceMetric
    initial_residuals: list
    C2: float
    C3: float

    @property
    def A(self) -> float:
        return self.C2 + 2 * self.C3 + 1


# -- Ricci potential ------------------------------------------------------------------

def omega_potential(Omega: SurfaceMetric, section: DivisorSection, tol: float = 1e-8) -> np.ndarray:
    """F_Omega with i ddbar F_Omega = Omega + Ric(Omega) + (1 - beta) i ddbar log|s|^2."""
    spec = Omega.spec
    rhs = (Omega.density - 0.5 * lap5(np.log(Omega.density), spec.h)
           + (1 - spec.beta) * divisor_form_density(section))
    defect = float(rhs.sum()) * spec.h**2
    if abs(defect) > tol:
        raise ValueError(
            f"cohomology normalization violated: int Omega - 2 pi (1 - beta) = {defect:.3e}"
        )
    return poisson_fft(rhs, spec.h)


def ricci_potential_f(omega: SurfaceMetric, Omega: SurfaceMetric, section: DivisorSection,
                      delta: float, F_Omega: np.ndarray | None = None) -> np.ndarray:
    """f = F_Omega + delta |s|^(2 beta) - log(|s|^(2 - 2 beta) omega / Omega), filled at p."""
    spec = omega.spec
    F_Omega = omega_potential(Omega, section) if F_Omega is None else F_Omega
    f = (F_Omega + delta * section.power(2 * spec.beta)
         - (2 - 2 * spec.beta) * section.log_values()
         - np.log(omega.density / Omega.density))
    return fill_cone_node(f, spec)


def ricci_identity_residual(m: SurfaceMetric, f: np.ndarray) -> np.ndarray:
    """K rho + rho - (1/2) L f off the apex collar (NaN inside)."""
    K = gauss_curvature(m)
    return K * m.density + m.density - 0.5 * lap5(f, m.spec.h)


# -- initial metric -----------------------------------------------------------------

def initial_functional(omega: SurfaceMetric, phi) -> np.ndarray:
    """log(omega_phi / omega) - phi."""
    rho = omega.density + 0.5 * lap5(phi, omega.spec.h)
    if not np.all(rho > 0):
        raise AdmissibilityError(f"omega_phi density reaches {rho.min():.3g}")
    return np.log(rho / omega.density) - phi


def initial_metric(omega: SurfaceMetric, f: np.ndarray, sp: SmoothingParams,
                   tol: float = 1e-10, max_iter: int = 20):
    """(omega_0, f_0, phi, residual history); Newton with (Delta - 1) inner solves."""
    spec = omega.spec
    f0 = lowpass(f, sp.cutoff)
    target = f - f0
    cert = smoothness_certificate(f0, sp.cutoff, spec.h)
    if not cert.ok:
        raise AdmissibilityError(f"f_0 fails the smoothness certificate: {cert}")
    phi = np.zeros_like(f)
    R = initial_functional(omega, phi) - target
    history = [float(np.max(np.abs(R)))]
    while history[-1] >= tol:
        if len(history) > max_iter:
            raise ConvergenceError(f"initial-metric Newton stalled above {tol:g}", history)
        m_phi = omega.with_potential(phi)
        scale = history[-1]
        psi = solve_shifted(LinearProblem(m_phi, -R, shift=1.0, tol=1e-6 * scale))
        lam = 1.0
        for _ in range(31):
            try:
                R_new = initial_functional(omega, phi + lam * psi) - target
                res = float(np.max(np.abs(R_new)))
            except AdmissibilityError:
                res = np.inf
            if res < history[-1]:
                break
            lam *= 0.5
        else:
            raise ConvergenceError("initial-metric backtracking exhausted", history)
        phi = phi + lam * psi
        R = R_new
        history.append(res)
    omega0 = SurfaceMetric(spec, omega.density + 0.5 * lap5(phi, spec.h), "initial")
    return omega0, f0, phi, history


# -- the path -----------------------------------------------------------------------

def path_residual(omega0: SurfaceMetric, f0: np.ndarray, t: float, u: np.ndarray) -> np.ndarray:
    """1 + Delta_0 u - e^{t f_0 + u}."""
    return 1.0 + 0.5 * lap5(u, omega0.spec.h) / omega0.density - np.exp(t * f0 + u)


def _newton_path(omega0: SurfaceMetric, f0, t: float, u, tol: float, max_iter: int):
    spec = omega0.spec
    rho0 = omega0.density
    R = path_residual(omega0, f0, t, u)
    history = [float(np.max(np.abs(R)))]
    while history[-1] >= tol:
        if len(history) > max_iter:
            raise ConvergenceError(f"path Newton at t={t:g} stalled", history)
        w = np.exp(t * f0 + u) * rho0
        G = rho0 * R
        du = solve_spd(w, G, spec.h, tol=max(1e-6 * float(np.max(np.abs(G))), 1e-300))
        lam = 1.0
        for _ in range(31):
            trial = u + lam * du
            dens = rho0 + 0.5 * lap5(trial, spec.h)
            if np.all(dens > 0):
                R_new = path_residual(omega0, f0, t, trial)
                res = float(np.max(np.abs(R_new)))
                if res < history[-1]:
                    break
            lam *= 0.5
        else:
            raise ConvergenceError(f"path backtracking exhausted at t={t:g}", history)
        u, R = trial, R_new
        history.append(res)
    return u, history


def continuity_step(state: ContinuityState, t_next: float, setup: KESetup) -> ContinuityState:
    """Newton corrector from the previous u at the new t."""
    prob = setup.problem
    u, hist = _newton_path(setup.omega0, setup.f0, t_next, state.u, prob.newton_tol, prob.max_iter)
    new = ContinuityState(t_next, u, hist)
    new.monitors = monitors(new, setup)
    return new


def monitors(state: ContinuityState, setup: KESetup) -> MonitorReport:
    spec = setup.omega.spec
    omega, rho0 = setup.omega, setup.omega0.density
    u = state.u
    rho_t = rho0 + 0.5 * lap5(u, spec.h)
    # C0: maximum principle
    c0_bound = max(-float(setup.f0.min()), 0.0)
    # Chern-Lu at the interior maximum of Q = tr - A u~, u~ = phi + u
    tr = omega.density / rho_t
    A = setup.A
    Q = tr - A * (setup.phi + u)
    # C3 only bounds K(omega) off the collar, so the inequality is checked there
    off = cone_mask(spec)
    node = np.unravel_index(int(np.argmax(np.where(off, Q, -np.inf))), Q.shape)
    gap = 0.5 * lap5(Q, spec.h) / rho_t - (-1.0 - A + tr)
    ratio = rho_t / omega.density
    # C^{2, alpha} proxy on the grid and on the grid with every second node
    m0 = setup.omega0
    alpha = setup.problem.alpha
    fine = potential_proxy(m0, u, alpha)
    coarse_spec = spec.coarsened()
    coarse = SurfaceMetric(coarse_spec, rho0[::2, ::2])
    coarse_val = potential_proxy(coarse, u[::2, ::2], alpha)
    return MonitorReport(
        t=state.t, sup_u=float(u.max()), c0_bound=c0_bound, c0_slack=10.0 / spec.N,
        A=A, C2=setup.C2, C3=setup.C3, trace_max=float(tr[node]),
        chernlu_residual=float(gap[node]), chernlu_node=tuple(int(v) for v in node),
        chernlu_min=float(np.min(gap[off])),
        C_lower=float(np.max(1.0 / ratio)), C_upper=float(np.max(ratio)),
        holder_fine=fine, holder_coarse=coarse_val,
    )


# -- driver -------------------------------------------------------------------------

def prepare(prob: KEProblem) -> KESetup:
    """Reference metric, Ricci potential, mollified start and the Chern-Lu constants."""
    spec = prob.spec
    section = build_section_norm(spec)
    area = prob.Omega_area
    Omega = flat_metric(spec, area)
    delta = admissible_delta(spec, area, section) if prob.delta is None else prob.delta
    omega = build_reference_metric(spec, delta, area, section)
    F_Omega = omega_potential(Omega, section)
    f = ricci_potential_f(omega, Omega, section, delta, F_Omega)
    sp = prob.smoothing()
    omega0, f0, phi, hist = initial_metric(omega, f, sp)
    C2 = max(0.0, float(np.max(-0.5 * lap5(f0, spec.h) / omega.density)))
    K = gauss_curvature(omega)
    C3 = 1.2 * max(float(np.nanmax(K)), 0.0)
    return KESetup(prob, section, Omega, omega, delta, F_Omega, f, f0, phi, omega0, hist, C2, C3)


@dataclass
class KEResult:
    setup: KESetup
    states: list
    u: np.ndarray
    omega_KE: SurfaceMetric

    @property
    def final_residual(self) -> float:
        return self.states[-1].residual

    @property
    def accepted_steps(self) -> int:
        return len(self.states) - 1

    def curvature_error(self, order: int = 4, radius_factor: float = 4.0) -> np.ndarray:
        """|K(omega_KE) + 1| at nodes with |z - p| > radius_factor * r0."""
        spec = self.omega_KE.spec
        K = gauss_curvature(self.omega_KE, exclude_radius=radius_factor * spec.r0, order=order)
        return np.abs(K[np.isfinite(K)] + 1)


class Checkpointer:
    """JSON manifest plus one CSV per accepted t."""

    def __init__(self, directory, prob: KEProblem):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.dir / "manifest.json"
        self.prob = prob

    def _config(self) -> dict:
        p = self.prob
        return {"spec": p.spec.header(), "delta": p.delta, "schedule": list(p.schedule),
                "newton_tol": p.newton_tol, "mollifier_scale": p.mollifier_scale}

    def load(self) -> dict | None:
        if not self.manifest_path.exists():
            return None
        data = json.loads(self.manifest_path.read_text())
        if data.get("config") != self._config():
            raise ValueError("checkpoint was written for a different problem")
        return data

    def save(self, states: list, setup: KESetup) -> None:
        entries = []
        for k, st in enumerate(states):
            name = f"u_{k:03d}.csv"
            path = self.dir / name
            if not path.exists():
                save_grid(path, st.u, setup.omega.spec, t=st.t)
            entries.append({"index": k, "t": st.t, "file": name, "residual": st.residual,
                            "residuals": list(st.residuals),
                            "monitors": st.monitors.as_dict() if st.monitors else None})
        data = {"config": self._config(), "states": entries}
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=1))
        tmp.replace(self.manifest_path)

    def restore(self, setup: KESetup) -> list:
        data = self.load()
        if not data:
            return []
        states = []
        for e in data["states"]:
            g, _ = load_grid(self.dir / e["file"])
            u = g.values
            res = float(np.max(np.abs(path_residual(setup.omega0, setup.f0, e["t"], u))))
            if res != e["residual"]:
                raise ValueError(
                    f"checkpoint {e['file']}: re-evaluated residual {res!r} != stored {e['residual']!r}"
                )
            st = ContinuityState(e["t"], u, list(e["residuals"]))
            st.monitors = monitors(st, setup)
            states.append(st)
        return states


def ke_solve(prob: KEProblem, checkpoint_dir=None, resume: bool = False,
             setup: KESetup | None = None, log=None) -> KEResult:
    """Run the whole path; bisects a failing t-increment up to six times."""
    setup = prepare(prob) if setup is None else setup
    ckpt = Checkpointer(checkpoint_dir, prob) if checkpoint_dir is not None else None
    states = ckpt.restore(setup) if (ckpt and resume) else []
    if not states:
        start = ContinuityState(0.0, np.zeros_like(setup.f0))
        start.residuals = [float(np.max(np.abs(path_residual(setup.omega0, setup.f0, 0.0, start.u))))]
        start.monitors = monitors(start, setup)
        states = [start]
        if ckpt:
            ckpt.save(states, setup)
    pending = [t for t in prob.schedule if t > states[-1].t]
    depth = {t: 0 for t in pending}
    while pending:
        t_next = pending[0]
        try:
            new = continuity_step(states[-1], t_next, setup)
        except (ConvergenceError, AdmissibilityError) as exc:
            d = depth[t_next]
            if d >= MAX_BISECTIONS:
                raise ConvergenceError(
                    f"path failed at t={t_next:g} after {MAX_BISECTIONS} bisections: {exc}",
                    [s.t for s in states],
                ) from exc
            mid = 0.5 * (states[-1].t + t_next)
            depth[mid] = d + 1
            depth[t_next] = d + 1
            pending.insert(0, mid)
            continue
        pending.pop(0)
        states.append(new)
        if log:
            log(f"t={new.t:.4f} iterations={new.iterations} residual={new.residual:.2e}")
        if ckpt:
            ckpt.save(states, setup)
    u = setup.phi + states[-1].u
    omega_KE = SurfaceMetric(setup.omega.spec,
                             setup.omega.density + 0.5 * lap5(u, setup.omega.spec.h), "KE")
    return KEResult(setup, states, u, omega_KE)


__all__ = [
    "KEProblem", "KESetup", "KEResult", "MonitorReport", "ContinuityState", "Checkpointer",
    "omega_potential", "ricci_potential_f", "ricci_identity_residual", "initial_functional",
    "initial_metric", "path_residual", "continuity_step", "monitors", "prepare", "ke_solve",
    "MAX_BISECTIONS",
]
