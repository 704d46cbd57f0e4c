"""Making the Ricci curvature bounded by a Monge-Ampere solve.

On the testbed the reference metric satisfies, exactly for the 5-point L,

    Ric(omega) = Ric(Omega) + (1 - beta) i ddbar log|s|^2 + i ddbar F,
    F = log(|s|^(2 beta - 2) Omega / omega),

and F is only Holder at p.  Splitting F = h + (F - h) with F - h a low-pass
(hence smooth) field and solving H(phi) = log(omega_phi / omega) = h gives

    Ric(omega_phi) = Ric(Omega) + (1 - beta) i ddbar log|s|^2 + i ddbar (F - h),

a smooth form off the divisor.  In one complex dimension H(phi) = h is
rho + (1/2) L phi = rho e^h; Newton is run on the logarithmic form, whose
Jacobian Delta_{omega_phi} is inverted exactly by FFT.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cone_geometry import cone_distance_arrays
from .cone_surface import (DivisorSection, SurfaceMetric, SurfaceSpec, cone_mask, displacement,
                           _smooth_step, divisor_form_density, fill_cone_node, lap5)
from .errors import AdmissibilityError, ConvergenceError
from .linear_solver import poisson_fft


# -- context and parameters ---------------------------------------------------------

@dataclass
class MAFunctionalContext:
    metric: SurfaceMetric
    bound: float = np.inf   # admissible size of the potential proxy

    @property
    def volume(self) -> float:
        return self.metric.area()

    @property
    def spec(self) -> SurfaceSpec:
        return self.metric.spec


@dataclass
class SmoothingParams:
    alpha_prime: float
    eps: float = 50.0
    mu: float = 1.0
    mollifier_scale: float = 1 / 16

    def __post_init__(self):
        if not self.eps > 0 or not self.mu > 0:
            raise ValueError("eps and mu must be positive")
        if not self.mollifier_scale > 0:
            raise ValueError("mollifier_scale must be positive")
        if not self.alpha_prime > 0:
            raise ValueError("alpha_prime must be positive")

    @classmethod
    def for_beta(cls, beta: float, **kw) -> "SmoothingParams":
        """Defaults with alpha' = 0.9 (1/beta - 1), capped at 0.9."""
        sp = cls(alpha_prime=min(0.9 * (1 / beta - 1), 0.9), **kw)
        sp.validate(beta)
        return sp

    def validate(self, beta: float) -> None:
        if not self.alpha_prime < 1 / beta - 1:
            raise ValueError(
                f"alpha_prime={self.alpha_prime} must be below 1/beta - 1 = {1 / beta - 1:.4g}"
            )

    @property
    def cutoff(self) -> float:
        """Largest kept wave number |k| (cycles per unit length)."""
        return 1.0 / self.mollifier_scale


# -- the functional H ---------------------------------------------------------------

def potential_density(m: SurfaceMetric, phi) -> np.ndarray:
    """Density of omega + i ddbar phi."""
    return m.density + 0.5 * lap5(np.asarray(phi, dtype=float), m.spec.h)


def ma_functional(ctx: MAFunctionalContext, phi) -> np.ndarray:
    """H(phi) = log(omega_phi / omega)."""
    rho = potential_density(ctx.metric, phi)
    if not np.all(rho > 0):
        raise AdmissibilityError(
            f"left admissible neighborhood: omega_phi density reaches {rho.min():.3g}"
        )
    return np.log(rho / ctx.metric.density)


def ma_derivative(ctx: MAFunctionalContext, phi, psi) -> np.ndarray:
    """D_phi H (psi) = Delta_{omega_phi} psi."""
    rho = potential_density(ctx.metric, phi)
    return 0.5 * lap5(np.asarray(psi, dtype=float), ctx.spec.h) / rho


# -- Ricci potential and its smoothing ----------------------------------------------

def ricci_potential_F(omega: SurfaceMetric, Omega: SurfaceMetric, section: DivisorSection) -> np.ndarray:
    """F = log(|s|^(2 beta - 2) Omega / omega), filled at p."""
    spec = omega.spec
    F = (2 * spec.beta - 2) * section.log_values() + np.log(Omega.density / omega.density)
    return fill_cone_node(F, spec)


def lowpass(u: np.ndarray, cutoff: float) -> np.ndarray:
    """Fourier multiplier chi(|k| / cutoff): 1 on [0, 1/2], C-infinity decay, 0 from 1 on.

    This is convolution with a Schwartz-class kernel of width ~ 1 / cutoff.
    Fields whose spectrum lies in |k| <= cutoff / 2 are reproduced exactly.
    """
    N = u.shape[0]
    k1 = np.fft.fftfreq(N, 1.0 / N)
    k2 = np.fft.rfftfreq(N, 1.0 / N)
    k = np.hypot(k1[:, None], k2[None, :])
    chi = 1.0 - _smooth_step(2.0 * k / cutoff - 1.0)
    return np.fft.irfft2(np.fft.rfft2(u) * chi, s=u.shape)


@dataclass
class SmoothnessCertificate:
    """Second differences of a band-limited field against the Bernstein bound.

    For g = sum over |k| <= k_c of g_k e^{2 pi i k.x}, every second derivative is
    bounded by (2 pi k_c)^2 sum |g_k|, a number that does not depend on N once
    the grid resolves the band.
    """

    second_difference: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.second_difference <= self.bound * (1 + 1e-9)


def smoothness_certificate(g: np.ndarray, cutoff: float, h: float) -> SmoothnessCertificate:
    d2 = max(
        float(np.max(np.abs(np.roll(g, 1, ax) - 2 * g + np.roll(g, -1, ax)))) for ax in (0, 1)
    ) / (h * h)
    coeff = np.abs(np.fft.fft2(g)) / g.size
    coeff[0, 0] = 0.0
    return SmoothnessCertificate(d2, (2 * np.pi * cutoff) ** 2 * float(coeff.sum()))


@dataclass
class SmoothingResult:
    h: np.ndarray              # target h, normalised so int e^h dA = v
    F_minus_h: np.ndarray      # band-limited
    shift: float               # constant added to F - P F
    window: float              # log(int e^{F - P F} dA / v) before the shift
    certificate: SmoothnessCertificate

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.h)))


def smooth_approximation(F: np.ndarray, sp: SmoothingParams, metric: SurfaceMetric) -> SmoothingResult:
    """Split F = h + (F - h) with F - h in the band |k| < 1 / mollifier_scale.

    h = F - P F + c with c fixing int e^h dA_omega = v.  Fails when F - P F is
    not within mu of zero or its exponential volume leaves [e^-mu v, e^mu v].
    """
    F = np.asarray(F, dtype=float)
    smooth = lowpass(F, sp.cutoff)
    rough = F - smooth
    size = float(np.max(np.abs(rough)))
    v = metric.area()
    vol = float(np.sum(metric.density * np.exp(rough))) * metric.spec.h**2
    window = float(np.log(vol / v))
    if size > sp.mu or abs(window) > sp.mu:
        raise AdmissibilityError(
            f"|F - PF|_inf = {size:.3g}, log-volume window {window:.3g} exceed mu = {sp.mu}; "
            "decrease mollifier_scale"
        )
    c = -window
    h = rough + c
    F_minus_h = smooth - c
    cert = smoothness_certificate(F_minus_h, sp.cutoff, metric.spec.h)
    return SmoothingResult(h, F_minus_h, c, window, cert)


# -- size of a potential ------------------------------------------------------------

_HOLDER_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2))


def grid_holder_seminorm(values: np.ndarray, spec: SurfaceSpec, alpha: float,
                         cone_radius: float = 0.25) -> float:
    """Holder quotient max |g(x) - g(y)| / d(x, y)^alpha over short lattice pairs.

    Pairs with both nodes within ``cone_radius`` of p are measured with the cone
    distance in the chart w = (z - p)^beta; other pairs with the flat distance.
    """
    z = displacement(spec)
    r = np.abs(z)
    w = np.abs(z) ** spec.beta * np.exp(1j * np.angle(z))
    best = 0.0
    for a, b in _HOLDER_OFFSETS:
        shifted = lambda arr: np.roll(np.roll(arr, -a, 0), -b, 1)
        diff = np.abs(values - shifted(values))
        near = (r < cone_radius) & (shifted(r) < cone_radius)
        d = np.where(near, cone_distance_arrays(w, shifted(w), spec.beta),
                     np.hypot(a, b) * spec.h)
        best = max(best, float(np.max(diff / d**alpha)))
    return best


def potential_proxy(m: SurfaceMetric, phi: np.ndarray, alpha: float) -> float:
    """|phi|_inf + |Delta phi|_inf + [Delta phi]_alpha, the C^{2, alpha} stand-in."""
    lap = 0.5 * lap5(phi, m.spec.h) / m.density
    return (float(np.max(np.abs(phi))) + float(np.max(np.abs(lap)))
            + grid_holder_seminorm(lap, m.spec, alpha))


# -- Newton solve of H(phi) = h ------------------------------------------------------

@dataclass
class FlattenResult:
    phi: np.ndarray
    residuals: list = field(default_factory=list)
    steps: list = field(default_factory=list)    # accepted damping factors
    proxy: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.residuals) - 1

    def residual_ratios(self) -> list:
        r = self.residuals
        return [r[k + 1] / r[k] for k in range(len(r) - 1) if r[k] > 0]

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "residuals": list(self.residuals),
                "steps": list(self.steps), "proxy": self.proxy}


def flatten_ricci(ctx: MAFunctionalContext, h: np.ndarray, sp: SmoothingParams,
                  tol: float = 1e-8, max_iter: int = 30, max_halvings: int = 30) -> FlattenResult:
    """Newton iteration for H(phi) = h with backtracking; returns the mean-zero phi."""
    m = ctx.metric
    spec = m.spec
    h = np.asarray(h, dtype=float)
    vol = float(np.sum(m.density * np.exp(h))) * spec.h**2
    if abs(vol - ctx.volume) > 1e-8 * ctx.volume:
        raise AdmissibilityError(
            f"target is not volume-normalised: int e^h dA = {vol:.12g}, v = {ctx.volume:.12g}"
        )
    phi = np.zeros_like(h)
    R = ma_functional(ctx, phi) - h
    out = FlattenResult(phi, [float(np.max(np.abs(R)))])
    while out.residuals[-1] >= tol:
        if out.iterations >= max_iter:
            raise ConvergenceError(f"Newton did not reach {tol:g} in {max_iter} steps",
                                   list(zip(out.residuals, [1.0] + out.steps)))
        rho = potential_density(m, phi)
        b = -rho * R
        psi = poisson_fft(b - b.mean(), spec.h)
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = phi + lam * psi
            try:
                R_new = ma_functional(ctx, trial) - h
                res = float(np.max(np.abs(R_new)))
            except AdmissibilityError:
                res = np.inf
            if res < out.residuals[-1]:
                break
            lam *= 0.5
        else:
            raise ConvergenceError("backtracking exhausted 30 halvings",
                                   list(zip(out.residuals, [1.0] + out.steps)))
        phi, R = trial, R_new
        out.residuals.append(res)
        out.steps.append(lam)
    phi = phi - float(np.sum(m.density * phi) / np.sum(m.density))
    out.phi = phi
    out.proxy = potential_proxy(m, phi, sp.alpha_prime)
    if out.proxy > sp.eps:
        raise AdmissibilityError(
            f"potential proxy {out.proxy:.3g} exceeds eps = {sp.eps}; decrease mollifier_scale"
        )
    return out


def ricci3_residual(m_phi: SurfaceMetric, Omega: SurfaceMetric, section: DivisorSection,
                    F_minus_h: np.ndarray) -> np.ndarray:
    """Ric(omega_phi) minus Ric(Omega) + (1 - beta) sigma + i ddbar (F - h), as densities.

    NaN inside the apex collar.
    """
    spec = m_phi.spec
    ric_phi = -0.5 * lap5(np.log(m_phi.density), spec.h)
    target = (-0.5 * lap5(np.log(Omega.density), spec.h)
              + (1 - spec.beta) * divisor_form_density(section)
              + 0.5 * lap5(F_minus_h, spec.h))
    return np.where(cone_mask(spec), ric_phi - target, np.nan)


__all__ = [
    "MAFunctionalContext", "SmoothingParams", "SmoothingResult", "SmoothnessCertificate",
    "FlattenResult", "potential_density", "ma_functional", "ma_derivative",
    "ricci_potential_F", "lowpass", "smoothness_certificate", "smooth_approximation",
    "grid_holder_seminorm", "potential_proxy", "flatten_ricci", "ricci3_residual",
]
