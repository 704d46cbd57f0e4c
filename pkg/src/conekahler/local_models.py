"""Pointwise local models of the reference metric near the divisor.

Everything here works with order-2 jets supplied by the caller: the value of
F, its derivatives dF/dz_j and the complex Hessian d^2F/dz_j dconj(z_k) at one
point, plus the coefficients Omega_{j kbar} of a smooth Kahler form written as
sum Omega_{j kbar} i dz_j ^ dconj(z_k).  Metric components are contractions
g(a, conj b) with the convention that i dz ^ dconj(z) has component 1 on
(d/dz, conj d/dz).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cone_geometry import ConeParams, FrameHermitian, holder_exponent_fit


@dataclass
class LocalData:
    """Jet data for omega = Omega + delta * i ddbar(F |z1|^(2 beta)) at ``z``."""

    F: float
    dF: np.ndarray       # dF/dz_j
    ddF: np.ndarray      # d^2 F / dz_j dconj(z_k), Hermitian
    Omega: np.ndarray    # Omega_{j kbar}, Hermitian positive definite
    z: np.ndarray
    params: ConeParams
    delta: float = 1.0

    def __post_init__(self):
        self.dF = np.asarray(self.dF, dtype=complex)
        self.ddF = np.asarray(self.ddF, dtype=complex)
        self.Omega = np.asarray(self.Omega, dtype=complex)
        self.z = np.asarray(self.z, dtype=complex)
        n = self.z.size
        if self.dF.shape != (n,) or self.ddF.shape != (n, n) or self.Omega.shape != (n, n):
            raise ValueError("jet shapes do not match the dimension of z")
        if not self.F > 0:
            raise ValueError("F must be positive at the point")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if np.linalg.eigvalsh(0.5 * (self.Omega + self.Omega.conj().T))[0] <= 0:
            raise ValueError("Omega must be positive definite")

    @property
    def n(self) -> int:
        return self.z.size

    def scaled(self):
        """(F, dF, ddF) multiplied by delta."""
        d = self.delta
        return d * self.F, d * self.dF, d * self.ddF


def reference_components(d: LocalData) -> FrameHermitian:
    """g(v_i, conj v_j) for omega = Omega + i ddbar(delta F |z1|^(2 beta)).

    At z1 = 0 the radial limits are used: g_{1 1bar} = beta^2 delta F,
    g_{1 jbar} = 0 and g_{j kbar} = Omega_{j kbar}.
    """
    beta = d.params.beta
    F, dF, ddF = d.scaled()
    z1 = d.z[0]
    a = abs(z1)
    n = d.n
    g = np.empty((n, n), dtype=complex)
    g[0, 0] = (a ** (2 - 2 * beta) * d.Omega[0, 0] + a**2 * ddF[0, 0]
               + beta * (z1 * dF[0] + np.conj(z1 * dF[0])) + beta**2 * F)
    # |z1|^(beta-1) conj(z1) -> 0 as z1 -> 0
    mixed = a ** (beta - 1) * np.conj(z1) if a > 0 else 0.0
    for j in range(1, n):
        g[0, j] = (a ** (1 - beta) * d.Omega[0, j] + a ** (1 + beta) * ddF[0, j]
                   + beta * mixed * np.conj(dF[j]))
        g[j, 0] = np.conj(g[0, j])
    g[1:, 1:] = d.Omega[1:, 1:] + a ** (2 * beta) * ddF[1:, 1:]
    out = FrameHermitian(g)
    out.flags["positive_definite"] = out.positive_definite
    return out


def _branch_power(z1: complex, beta: float, branch_cut: float) -> complex:
    """z1^beta with arg z1 taken in (branch_cut - 2 pi, branch_cut]."""
    arg = np.angle(z1)
    arg = branch_cut - np.mod(branch_cut - arg, 2 * np.pi)
    return abs(z1) ** beta * np.exp(1j * beta * arg)


def sturm_gamma(d: LocalData, w: complex) -> np.ndarray:
    """Components of Gamma = Omega + i ddbar(delta F |w|^2) on C^(n+1) at (z, w)."""
    F, dF, ddF = d.scaled()
    n = d.n
    G = np.empty((n + 1, n + 1), dtype=complex)
    G[:n, :n] = d.Omega + abs(w) ** 2 * ddF
    G[:n, n] = dF * w
    G[n, :n] = np.conj(dF * w)
    G[n, n] = F
    return G


def sturm_pullback(d: LocalData, branch_cut: float = np.pi) -> FrameHermitian:
    """Phi^* Gamma in the adapted frame, Phi(z) = (z, z1^beta).

    The branch of z1^beta is cut along the ray at angle ``branch_cut``; the
    pull-back does not depend on this choice.
    """
    beta = d.params.beta
    n = d.n
    z1 = d.z[0]
    if z1 == 0:
        return reference_components(d)
    w = _branch_power(z1, beta, branch_cut)
    G = sturm_gamma(d, w)
    # dPhi(d/dz_a) = e_a + c delta_{a0} e_n, so J^T G conj(J) is G[:n, :n] plus a
    # rank-one correction in row and column 0
    c = beta * w / z1
    pulled = G[:n, :n].copy()
    pulled[0, :] += c * G[n, :n]
    pulled[:, 0] += np.conj(c) * G[:n, n]
    pulled[0, 0] += abs(c) ** 2 * G[n, n]
    frame = np.ones(n)
    frame[0] = abs(z1) ** (1 - beta)
    return FrameHermitian(frame[:, None] * pulled * frame[None, :])


def gaussian_curvature_Ka(z1, a: float, beta: float):
    """Gaussian curvature of g_a = (a + |z1|^(2 beta - 2)) |dz1|^2.

    K_a = -2 (1 - beta)^2 a |z1|^(2 - 4 beta) / (1 + a |z1|^(2 - 2 beta))^3, the
    value of -(2 lam)^-1 Lap log lam for lam = a + |z1|^(2 beta - 2).
    """
    if not abs(a) < 1:
        raise ValueError("need |a| < 1")
    r = np.abs(np.asarray(z1, dtype=complex))
    if np.any(r == 0):
        raise ValueError("K_a is evaluated off z1 = 0")
    den = 1 + a * r ** (2 - 2 * beta)
    if np.any(den <= 0):
        raise ValueError("non-positive denominator: g_a is not a metric there")
    return -2 * (beta - 1) ** 2 * a * r ** (2 - 4 * beta) / den**3


def conformal_curvature_fd(lam: Callable, z: complex, step: float = 1e-4) -> float:
    """-(2 lam)^-1 Lap log lam by central differences (independent oracle)."""
    x, y = z.real, z.imag
    f = lambda u, v: np.log(lam(complex(u, v)))
    lap = (f(x + step, y) + f(x - step, y) + f(x, y + step) + f(x, y - step)
           - 4 * f(x, y)) / step**2
    return -lap / (2 * lam(z))


@dataclass
class ScanReport:
    radii: np.ndarray
    values: np.ndarray
    verdict: str


def curvature_unboundedness_scan(a: float, beta: float, radii) -> ScanReport:
    """K_a along decreasing radii with a divergence verdict."""
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) >= 0):
        raise ValueError("radii must decrease")
    if beta <= 0.5:
        vals = gaussian_curvature_Ka(radii, a, beta)
        return ScanReport(radii, vals, "exponent 2-4beta >= 0: no divergence claimed")
    vals = gaussian_curvature_Ka(radii, a, beta)
    if a == 0:
        verdict = "zero"
    elif a > 0:
        verdict = "diverges to -inf" if np.all(np.diff(vals) < 0) else "inconclusive"
    else:
        verdict = "diverges to +inf" if np.all(np.diff(vals) > 0) and vals[-1] > 0 else "inconclusive"
    return ScanReport(radii, vals, verdict)


def coordinate_change_components(tilde_g, z1: complex, beta: float) -> FrameHermitian:
    """Components after z~1 = z1, z~2 = z1 + z2 (n = 2), frame factors |z1|^(1-beta)."""
    gt = np.asarray(tilde_g.entries if isinstance(tilde_g, FrameHermitian) else tilde_g,
                    dtype=complex)
    if gt.shape != (2, 2):
        raise ValueError("coordinate change is defined for n = 2")
    c = abs(z1) ** (1 - beta)
    g = np.empty((2, 2), dtype=complex)
    g[0, 0] = gt[0, 0] + c * (gt[0, 1] + gt[1, 0]) + c * c * gt[1, 1]
    g[0, 1] = gt[0, 1] + c * gt[1, 1]
    g[1, 0] = np.conj(g[0, 1])
    g[1, 1] = gt[1, 1]
    return FrameHermitian(g)


def coordinate_change_exponent(beta: float, tilde_g=None, count: int = 12):
    """Fitted cone-coordinate exponent of r -> g_{1 2bar}(r) - g_{1 2bar}(0)."""
    gt = np.eye(2) if tilde_g is None else tilde_g
    r = 0.1 * 0.5 ** np.arange(count)
    z1 = r ** (1 / beta)
    base = coordinate_change_components(gt, 0, beta).entries[0, 1]
    inc = [abs(coordinate_change_components(gt, z, beta).entries[0, 1] - base) for z in z1]
    return holder_exponent_fit(r, inc)


# -- curvature of Hermitian (Kahler) metrics by finite differences -----------------

def holomorphic_sectional_curvature(metric: Callable, z, xi, step: float = 1e-4) -> float:
    """R(xi, conj xi, xi, conj xi) / g(xi, conj xi)^2 for a Kahler metric.

    ``metric(z)`` returns the Hermitian matrix g_{j kbar} at the complex point z.
    Uses R_{i jbar k lbar} = -d_k d_lbar g_{i jbar} + g^{p qbar} d_k g_{i qbar} d_lbar g_{p jbar}
    with the derivatives along the complex line z + t xi taken by central
    differences.  For n = 1 and g = lam this is K / 2.
    """
    z = np.asarray(z, dtype=complex)
    xi = np.asarray(xi, dtype=complex)
    g0 = np.asarray(metric(z), dtype=complex)
    ga_p, ga_m = metric(z + step * xi), metric(z - step * xi)
    gb_p, gb_m = metric(z + 1j * step * xi), metric(z - 1j * step * xi)
    da = (ga_p - ga_m) / (2 * step)
    db = (gb_p - gb_m) / (2 * step)
    D = 0.5 * (da - 1j * db)       # sum_k xi_k d_k g
    Dbar = 0.5 * (da + 1j * db)    # sum_l conj(xi_l) d_lbar g
    lap = (ga_p + ga_m + gb_p + gb_m - 4 * g0) / step**2
    DDbar = 0.25 * lap
    term1 = -(xi @ DDbar @ xi.conj())
    a_vec = xi @ D                  # a_q = sum_i xi_i D g_{i qbar}
    b_vec = Dbar @ xi.conj()        # b_p = sum_j Dbar g_{p jbar} conj(xi_j)
    term2 = a_vec @ np.linalg.inv(g0) @ b_vec
    norm = (xi @ g0 @ xi.conj()).real
    return float((term1 + term2).real / norm**2)


__all__ = [
    "LocalData", "ScanReport", "reference_components", "sturm_gamma", "sturm_pullback",
    "gaussian_curvature_Ka", "conformal_curvature_fd", "curvature_unboundedness_scan",
    "coordinate_change_components", "coordinate_change_exponent",
    "holomorphic_sectional_curvature",
]
