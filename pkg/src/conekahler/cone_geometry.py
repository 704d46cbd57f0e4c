"""Flat model cone on C^n: charts, distance, Hoelder seminorms and form bases.

The model metric with cone angle 2*pi*beta along {z1 = 0} is

    g_beta = beta^2 |z1|^(2 beta - 2) |dz1|^2 + sum_{j>=2} |dz_j|^2.

Cone coordinates replace z1 by w = r e^{i theta} with z1 = r^(1/beta) e^{i theta};
in them g_beta = dr^2 + beta^2 r^2 dtheta^2 + sum |dz_j|^2.  Points are stored with
the first coordinate as a complex number in both charts (z1 or w), which makes
the chart change a pointwise map on complex arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

COMPLEX = "complex"
CONE = "cone"

DEFAULT_MAX_PAIRS = 10**6


@dataclass(frozen=True)
class ConeParams:
    """Cone angle parameter ``beta`` and Hoelder exponent ``alpha``.

    ``regularity=True`` (the default) enforces ``alpha <= 1/beta - 1``, the
    range in which the metric regularity class does not depend on the chosen
    holomorphic coordinates.  Pass ``regularity=False`` when the exponent is
    only used to measure a seminorm.
    """

    beta: float
    alpha: float | None = None
    regularity: bool = True

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", min(1.0, self.max_alpha) if self.beta < 1 else 1.0)
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.regularity and self.beta < 1 and self.alpha > self.max_alpha + 1e-15:
            raise ValueError(
                f"alpha={self.alpha} exceeds 1/beta - 1 = {self.max_alpha:.6g}; "
                "use regularity=False for pure seminorm measurement"
            )

    @property
    def max_alpha(self) -> float:
        return 1.0 / self.beta - 1.0


@dataclass(frozen=True)
class ModelPoint:
    """A point of C^n.  ``first`` is z1 (complex chart) or r e^{i theta} (cone chart)."""

    first: complex
    rest: tuple = ()
    chart: str = COMPLEX

    def __post_init__(self):
        if self.chart not in (COMPLEX, CONE):
            raise ValueError(f"unknown chart {self.chart!r}")
        object.__setattr__(self, "first", complex(self.first))
        object.__setattr__(self, "rest", tuple(complex(z) for z in self.rest))

    @property
    def n(self) -> int:
        return 1 + len(self.rest)

    @property
    def polar(self) -> tuple[float, float]:
        """(r, theta) of the first coordinate, theta in [0, 2 pi); theta = 0 at the apex."""
        return abs(self.first), float(_angle(np.asarray(self.first)))

    def as_array(self) -> np.ndarray:
        return np.array((self.first, *self.rest), dtype=complex)


@dataclass
class FrameHermitian:
    """Metric components g(v_i, conj v_j) in the adapted frame.

    v_1 = |z1|^(1-beta) d/dz1 and v_j = d/dz_j for j >= 2.
    """

    entries: np.ndarray
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))

    @property
    def positive_definite(self) -> bool:
        return bool(self.eigenvalues()[0] > 0)


def _angle(z):
    return np.mod(np.angle(z), 2 * np.pi)


def to_cone(z1, beta: float):
    """z1 -> r e^{i theta} with r = |z1|^beta, theta = arg z1 (0 at the apex)."""
    z1 = np.asarray(z1, dtype=complex)
    return np.abs(z1) ** beta * np.exp(1j * _angle(z1))


def from_cone(w, beta: float):
    """r e^{i theta} -> z1 = r^(1/beta) e^{i theta}."""
    w = np.asarray(w, dtype=complex)
    return np.abs(w) ** (1.0 / beta) * np.exp(1j * _angle(w))


def chart_convert(p: ModelPoint, target: str, params: ConeParams) -> ModelPoint:
    if target not in (COMPLEX, CONE):
        raise ValueError(f"unknown chart {target!r}")
    if p.chart == target:
        return p
    conv = to_cone if target == CONE else from_cone
    return ModelPoint(complex(conv(p.first, params.beta)), p.rest, target)


def model_metric(p: ModelPoint, params: ConeParams) -> FrameHermitian:
    """g_beta in the adapted frame: diag(beta^2, 1, ..., 1) at every point."""
    diag = np.ones(p.n)
    diag[0] = params.beta**2
    return FrameHermitian(np.diag(diag).astype(complex))


def model_metric_cone_coords(p: ModelPoint, params: ConeParams) -> np.ndarray:
    """Real 2n x 2n matrix of g_beta in Cartesian cone coordinates.

    The first block is in (Re w, Im w) with w = r e^{i theta}; the remaining
    blocks are Euclidean.
    """
    q = chart_convert(p, CONE, params)
    _, theta = q.polar
    e_r = np.array([np.cos(theta), np.sin(theta)])
    e_t = np.array([-np.sin(theta), np.cos(theta)])
    g = np.eye(2 * q.n)
    g[:2, :2] = np.outer(e_r, e_r) + params.beta**2 * np.outer(e_t, e_t)
    return g


def cone_distance_arrays(w1, w2, beta: float, rest1=None, rest2=None):
    """Vectorised cone distance.  ``w1``, ``w2`` are cone-chart first coordinates.

    On the 2-d cone of total angle 2 pi beta the geodesic is a straight segment in
    the developed sector when beta * dtheta <= pi and passes through the apex
    otherwise; dtheta is the circle distance of the two angles.
    """
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    r1, r2 = np.abs(w1), np.abs(w2)
    dth = np.abs(_angle(w1) - _angle(w2))
    dth = np.minimum(dth, 2 * np.pi - dth)
    opening = beta * dth
    d2 = np.where(
        opening <= np.pi,
        r1 * r1 + r2 * r2 - 2 * r1 * r2 * np.cos(opening),
        (r1 + r2) ** 2,
    )
    d2 = np.maximum(d2, 0.0)
    if rest1 is not None:
        diff = np.asarray(rest1, dtype=complex) - np.asarray(rest2, dtype=complex)
        d2 = d2 + np.sum(np.abs(diff) ** 2, axis=-1)
    return np.sqrt(d2)


def cone_distance(p: ModelPoint, q: ModelPoint, params: ConeParams) -> float:
    p = chart_convert(p, CONE, params)
    q = chart_convert(q, CONE, params)
    if p.n != q.n:
        raise ValueError("points live in different dimensions")
    rest1 = np.array(p.rest, dtype=complex) if p.rest else None
    rest2 = np.array(q.rest, dtype=complex) if q.rest else None
    return float(cone_distance_arrays(p.first, q.first, params.beta, rest1, rest2))


def _as_cone_array(points, params: ConeParams) -> np.ndarray:
    if len(points) and isinstance(points[0], ModelPoint):
        return np.array([chart_convert(p, CONE, params).as_array() for p in points])
    pts = np.asarray(points, dtype=complex)
    return pts[:, None] if pts.ndim == 1 else pts


def holder_seminorm(points, values, params: ConeParams, alpha: float | None = None,
                    max_pairs: int = DEFAULT_MAX_PAIRS) -> float:
    """max |u(x) - u(y)| / d_beta(x, y)^alpha over scanned sample pairs.

    ``points`` are ModelPoints, or complex arrays of shape (M,) or (M, n) already
    in cone coordinates.  When the number of pairs exceeds ``max_pairs`` every
    s-th pair of the row-major enumeration (i < j) is scanned, s = ceil(total /
    max_pairs); the result is then a deterministic lower estimate.
    """
    alpha = params.alpha if alpha is None else alpha
    pts = _as_cone_array(points, params)
    vals = np.asarray(values, dtype=float)
    m = len(vals)
    if m < 2 or pts.shape[0] != m:
        raise ValueError("need at least two samples with matching points and values")
    total = m * (m - 1) // 2
    stride = max(1, -(-total // max_pairs))
    best = 0.0
    offset = 0  # global index of pair (i, i+1)
    for i in range(m - 1):
        count = m - 1 - i
        local = np.arange(count)
        if stride > 1:
            local = local[(offset + local) % stride == 0]
        offset += count
        if local.size == 0:
            continue
        j = i + 1 + local
        rest_i = pts[i, 1:] if pts.shape[1] > 1 else None
        rest_j = pts[j, 1:] if pts.shape[1] > 1 else None
        d = cone_distance_arrays(pts[i, 0], pts[j, 0], params.beta, rest_i, rest_j)
        du = np.abs(vals[j] - vals[i])
        same = d == 0
        if np.any(same & (du > 0)):
            raise ValueError("duplicate sample points carry different values")
        ok = ~same
        if np.any(ok):
            best = max(best, float(np.max(du[ok] / d[ok] ** alpha)))
    return best


class ExponentFit(NamedTuple):
    exponent: float
    constant_input: bool


def holder_exponent_fit(radii, increments, cap: float = 1.0) -> ExponentFit:
    """Least-squares slope of log|v(r) - v(0)| against log r, capped at ``cap``.

    ``increments`` are the values v(r) - v(0) at the given radii.
    """
    r = np.asarray(radii, dtype=float)
    dv = np.abs(np.asarray(increments, dtype=float))
    if r.size < 5:
        raise ValueError("need at least 5 radial samples")
    scale = max(1.0, float(np.max(dv)))
    if np.all(dv <= 1e-14 * scale):
        return ExponentFit(cap, True)
    keep = dv > 0
    if keep.sum() < 2:
        return ExponentFit(cap, True)
    slope = np.polyfit(np.log(r[keep]), np.log(dv[keep]), 1)[0]
    return ExponentFit(float(min(slope, cap)), False)


# -- forms -------------------------------------------------------------------------

FORM_10 = "(1,0)"
FORM_11 = "(1,1)"


@dataclass
class FormComponents:
    """Components in the eps-basis, eps = dr + i beta r dtheta.

    Keys: for (1,0)-forms ``"eps"`` and ``"dz{j}"`` (j >= 2); for (1,1)-forms
    ``"eps,eps"``, ``"eps,dz{k}"``, ``"dz{j},eps"`` and ``"dz{j},dz{k}"``, each meaning
    the coefficient of ``i a ^ conj(b)``.
    """

    kind: str
    components: dict
    vanishing_ok: bool = True
    holder_ok: bool = True
    exponents: dict = field(default_factory=dict)


def _radial_slope(r, mag) -> float:
    keep = (mag > 0) & (r > 0)
    if keep.sum() < 2:
        return np.inf
    return float(np.polyfit(np.log(r[keep]), np.log(mag[keep]), 1)[0])


def decompose_form(kind: str, coeffs: dict, z1, params: ConeParams,
                   slope_tol: float = 0.05) -> FormComponents:
    """Rewrite a (1,0)- or (1,1)-form given in the dz basis in the eps basis.

    ``coeffs`` maps an index (``j`` for (1,0), ``(j, k)`` for (1,1), 1-based) to
    complex samples at the points ``z1`` (all off {z1 = 0}).  Uses
    dz1 = beta^-1 |z1|^(1-beta) e^{i theta} eps.  The verdicts come from power-law
    fits of the component moduli against |z1|: a component decaying like a
    positive power extends by zero, one growing like a negative power is not C^alpha.
    """
    z1 = np.asarray(z1, dtype=complex)
    if np.any(z1 == 0):
        raise ValueError("samples must avoid {z1 = 0}")
    beta = params.beta
    mod = np.abs(z1)
    phase = np.exp(1j * np.angle(z1))
    fac = mod ** (1 - beta) * phase / beta  # dz1 = fac * eps
    out: dict = {}
    must_vanish: list = []
    if kind == FORM_10:
        for j, a in coeffs.items():
            a = np.broadcast_to(np.asarray(a, dtype=complex), z1.shape)
            if j == 1:
                out["eps"] = a * fac
                must_vanish.append("eps")
            else:
                out[f"dz{j}"] = a.copy()
    elif kind == FORM_11:
        for (j, k), c in coeffs.items():
            c = np.broadcast_to(np.asarray(c, dtype=complex), z1.shape)
            if j == 1 and k == 1:
                out["eps,eps"] = c * np.abs(fac) ** 2
            elif j == 1:
                key = f"eps,dz{k}"
                out[key] = c * fac
                must_vanish.append(key)
            elif k == 1:
                key = f"dz{j},eps"
                out[key] = c * np.conj(fac)
                must_vanish.append(key)
            else:
                out[f"dz{j},dz{k}"] = c.copy()
    else:
        raise ValueError(f"unknown form kind {kind!r}")

    exponents = {}
    holder_ok = True
    for key, vals in out.items():
        mag = np.abs(vals)
        if np.all(mag <= 1e-14 * max(1.0, mag.max(initial=0.0))):
            exponents[key] = np.inf
            continue
        slope = _radial_slope(mod, mag)
        exponents[key] = slope
        if slope < -slope_tol:
            holder_ok = False
    vanishing_ok = all(exponents[key] > slope_tol for key in must_vanish)
    return FormComponents(kind, out, vanishing_ok and holder_ok, holder_ok, exponents)


def random_points(rng: np.random.Generator, m: int, n: int = 1, radius: float = 1.0,
                  chart: str = CONE, params: ConeParams | None = None) -> list[ModelPoint]:
    """Uniform-ish random ModelPoints in a polydisc, for property checks."""
    pts = []
    for _ in range(m):
        first = radius * np.sqrt(rng.uniform()) * np.exp(2j * np.pi * rng.uniform())
        rest = tuple(radius * (rng.uniform(-1, 1) + 1j * rng.uniform(-1, 1)) for _ in range(n - 1))
        p = ModelPoint(first, rest, CONE)
        if chart == COMPLEX:
            p = chart_convert(p, COMPLEX, params or ConeParams(1.0))
        pts.append(p)
    return pts


def radial_samples(beta: float, fn, r_max: float = 0.1, count: int = 12, ratio: float = 0.5,
                   theta: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Cone radii r_k = r_max * ratio^k and the increments fn(z1(r_k)) - fn(0).

    ``fn`` takes complex z1.
    """
    r = r_max * ratio ** np.arange(count)
    z1 = from_cone(r * np.exp(1j * theta), beta)
    base = fn(np.array(0j))
    return r, np.asarray(fn(z1)) - base


__all__: Sequence[str] = [
    "ConeParams", "ModelPoint", "FrameHermitian", "FormComponents", "ExponentFit",
    "COMPLEX", "CONE", "FORM_10", "FORM_11", "to_cone", "from_cone", "chart_convert",
    "model_metric", "model_metric_cone_coords", "cone_distance", "cone_distance_arrays",
    "holder_seminorm", "holder_exponent_fit", "decompose_form", "random_points",
    "radial_samples",
]
