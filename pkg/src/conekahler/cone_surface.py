"""Periodic N x N torus with one cone point: metrics, Laplacian, curvature.

Conventions.  Nodes sit at (i/N, j/N), arrays are indexed [i, j] with i along
x.  A metric is stored through its area density rho with respect to dx dy, so
omega = rho dx^dy and the Riemannian metric is rho |dz|^2.  The discrete
i ddbar u has density (1/2) L u with L the periodic 5-point Laplacian; with this
factor Ric(omega) = K omega, so Ric = -omega is the same as K = -1.  The
Laplacian is Delta_g u = (i ddbar u) / omega = L u / (2 rho).

The cone point p is a node.  Formula values that are singular there (log|s|,
|s|^(2 beta - 2), ...) are replaced by the 4-neighbour average; every equation
is then posed on all nodes, which keeps summation by parts exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

FINITE = "finite"
LOG_SINGULAR = "log-singular"
EXCLUDED = "excluded"


@dataclass(frozen=True)
class SurfaceSpec:
    N: int
    beta: float
    r0: float = 0.15
    p: tuple | None = None

    def __post_init__(self):
        if self.N < 32:
            raise ValueError(f"N must be at least 32, got {self.N}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0 < self.r0 < 0.25:
            raise ValueError(f"r0 must lie in (0, 1/4), got {self.r0}")
        p = (self.N // 2, self.N // 2) if self.p is None else tuple(int(v) for v in self.p)
        if not all(0 < v < self.N for v in p):
            raise ValueError(f"cone point {p} must be strictly inside the fundamental domain")
        object.__setattr__(self, "p", p)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def collar(self) -> float:
        """Radius of the apex collar excluded from pointwise curvature checks."""
        return 0.5 * self.r0

    def header(self) -> dict:
        return {"N": self.N, "beta": self.beta, "p": list(self.p), "r0": self.r0}

    def coarsened(self) -> "SurfaceSpec":
        if self.N % 2 or any(v % 2 for v in self.p):
            raise ValueError("coarsening needs even N and an even cone index")
        return SurfaceSpec(self.N // 2, self.beta, self.r0, (self.p[0] // 2, self.p[1] // 2))


@lru_cache(maxsize=16)
def _offsets(N: int, p: tuple) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(N)
    dx = (idx - p[0]) / N
    dy = (idx - p[1]) / N
    dx = dx - np.round(dx)
    dy = dy - np.round(dy)
    X, Y = np.meshgrid(dx, dy, indexing="ij")
    X.setflags(write=False)
    Y.setflags(write=False)
    return X, Y


def displacement(spec: SurfaceSpec) -> np.ndarray:
    """z - p as a complex array (minimum-image convention)."""
    X, Y = _offsets(spec.N, spec.p)
    return X + 1j * Y


def distance(spec: SurfaceSpec) -> np.ndarray:
    X, Y = _offsets(spec.N, spec.p)
    return np.hypot(X, Y)


def coordinates(spec: SurfaceSpec) -> tuple[np.ndarray, np.ndarray]:
    x = np.arange(spec.N) / spec.N
    return np.meshgrid(x, x, indexing="ij")


def lap5(u: np.ndarray, h: float) -> np.ndarray:
    """Periodic 5-point Euclidean Laplacian."""
    return (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1)
            - 4.0 * u) / (h * h)


def lap5_fourth_order(u: np.ndarray, h: float) -> np.ndarray:
    """Periodic fourth-order Laplacian, stencil (-1, 16, -30, 16, -1) / 12 per axis."""
    out = -60.0 * u
    for ax in (0, 1):
        out += 16.0 * (np.roll(u, 1, ax) + np.roll(u, -1, ax))
        out -= np.roll(u, 2, ax) + np.roll(u, -2, ax)
    return out / (12.0 * h * h)


@lru_cache(maxsize=8)
def laplacian_matrix(N: int) -> sp.csr_matrix:
    """Sparse periodic 5-point Laplacian acting on row-major flattened grids."""
    h = 1.0 / N
    e = np.ones(N)
    T = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")
    T[0, N - 1] = 1.0
    T[N - 1, 0] = 1.0
    T = T.tocsr() / (h * h)
    eye = sp.identity(N, format="csr")
    return (sp.kron(T, eye) + sp.kron(eye, T)).tocsr()


def fill_cone_node(u: np.ndarray, spec: SurfaceSpec) -> np.ndarray:
    """Copy of ``u`` with the value at p replaced by its 4-neighbour average."""
    u = np.array(u, dtype=float)
    i, j = spec.p
    N = spec.N
    u[i, j] = 0.25 * (u[(i + 1) % N, j] + u[i - 1, j] + u[i, (j + 1) % N] + u[i, j - 1])
    return u


def cone_mask(spec: SurfaceSpec, radius: float | None = None) -> np.ndarray:
    """True on nodes kept by pointwise checks: |z - p| >= radius, and never p itself."""
    radius = spec.collar if radius is None else radius
    keep = distance(spec) >= radius
    keep[spec.p] = False
    return keep


# -- grid functions and serialisation ----------------------------------------------

@dataclass
class GridFunction:
    """Doubly periodic nodal values with the behaviour class at the cone node."""

    values: np.ndarray
    flag: str = FINITE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError("grid functions are square arrays")
        if self.flag not in (FINITE, LOG_SINGULAR, EXCLUDED):
            raise ValueError(f"unknown cone-node flag {self.flag!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function entries must be finite")


def save_grid(path, values, spec: SurfaceSpec, flag: str = FINITE, **meta) -> Path:
    """Write a grid as CSV (row-major, %.17g) preceded by a one-line JSON header."""
    path = Path(path)
    gf = values if isinstance(values, GridFunction) else GridFunction(values, flag)
    header = dict(spec.header(), flag=gf.flag, **gf.meta, **meta)
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        np.savetxt(fh, gf.values, fmt="%.17g", delimiter=",")
    return path


def load_grid(path) -> tuple[GridFunction, SurfaceSpec]:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing JSON header line")
        header = json.loads(first[2:])
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    spec = SurfaceSpec(header.pop("N"), header.pop("beta"), header.pop("r0"), tuple(header.pop("p")))
    flag = header.pop("flag", FINITE)
    return GridFunction(values, flag, header), spec


# -- divisor section ----------------------------------------------------------------

def _smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


SECTION_SCALE = 1.5  # |s| = |z - p| / (SECTION_SCALE * r0) on the inner disc


@lru_cache(maxsize=1)
def _glue_primitive():
    """Spline of G(x) = int_0^x (1 - S(t)) dt on [0, 1]; G(1) = 1/2 by symmetry of S."""
    x = np.linspace(0.0, 1.0, 2**14 + 1)
    return CubicSpline(x, integrate_cumulative(1.0 - _smooth_step(x), x))


def integrate_cumulative(y, x):
    """Cumulative Simpson integral on a uniform grid with an odd number of points."""
    dx = x[1] - x[0]
    out = np.zeros_like(y)
    out[2::2] = np.cumsum(dx / 3.0 * (y[:-2:2] + 4 * y[1:-1:2] + y[2::2]))
    out[1::2] = out[:-2:2] + dx / 12.0 * (5 * y[:-2:2] + 8 * y[1:-1:2] - y[2::2])
    return out


def section_profile(r, r0: float):
    """|s|_h as a function of the distance r to p.

    |s| = r / kappa for r <= r0 with kappa = 1.5 r0, |s| = 1 for r >= 2 r0.  On the
    glue annulus the flux r s' = (r / kappa)(1 - S((r - r0) / r0)) decays
    smoothly to zero, so |s| is C-infinity and increasing; the choice of kappa is
    exactly what makes the glue end at 1.
    """
    r = np.asarray(r, dtype=float)
    kappa = SECTION_SCALE * r0
    x = np.clip((r - r0) / r0, 0.0, 1.0)
    glue = (r0 + r0 * _glue_primitive()(x)) / kappa
    out = np.where(r <= r0, r / kappa, np.where(r >= 2 * r0, 1.0, glue))
    return out


@dataclass
class DivisorSection:
    """Stand-in for |s|_h: zero exactly at p."""

    spec: SurfaceSpec
    values: np.ndarray

    def log_values(self) -> np.ndarray:
        """log|s| with the cone-node value filled by the neighbour average."""
        with np.errstate(divide="ignore"):
            out = np.log(self.values)
        out[self.spec.p] = 0.0
        return fill_cone_node(out, self.spec)

    def power(self, exponent: float) -> np.ndarray:
        """|s|^exponent; for negative exponents the cone node gets the neighbour average."""
        if exponent >= 0:
            return self.values**exponent
        with np.errstate(divide="ignore"):
            out = self.values**exponent
        out[self.spec.p] = 0.0
        return fill_cone_node(out, self.spec)


def build_section_norm(spec: SurfaceSpec) -> DivisorSection:
    if spec.r0 * spec.N < 8:
        raise ValueError(
            f"glue annulus [r0, 2 r0] spans {spec.r0 * spec.N:.1f} cells (< 8): "
            "increase N or r0"
        )
    return DivisorSection(spec, section_profile(distance(spec), spec.r0))


def flat_section(spec: SurfaceSpec) -> DivisorSection:
    """|s| = 1 everywhere (no divisor); used for the beta -> 1 reductions."""
    return DivisorSection(spec, np.ones((spec.N, spec.N)))


def divisor_form_density(section: DivisorSection) -> np.ndarray:
    """Density of the smooth form i ddbar log|s|^2 on the torus.

    It is L log|s| off the apex collar and 0 inside it (where log|s| = log r is
    harmonic); the point mass at p is left out, which is what "in the complement
    of D" means for the forms.  The sum off the collar is minus the discrete flux
    of grad log r through it, within ~1e-5 of -2 pi; that defect is spread as a
    constant over the collar nodes other than p, so the total is exactly -2 pi
    while the values off the collar stay exactly L log|s|.
    """
    spec = section.spec
    out = lap5(section.log_values(), spec.h)
    if np.all(section.values > 0):  # no divisor
        return out
    inside = distance(spec) < spec.collar
    out[inside] = 0.0
    defect = -2 * np.pi - out.sum() * spec.h**2
    fill = inside.copy()
    fill[spec.p] = False
    out[fill] = defect / (fill.sum() * spec.h**2)
    return out


# -- metrics ------------------------------------------------------------------------

@dataclass
class SurfaceMetric:
    """Conformal metric rho |dz|^2 on the testbed, stored by its area density."""

    spec: SurfaceSpec
    density: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.density.shape != (self.spec.N, self.spec.N):
            raise ValueError("density shape does not match the grid")
        if not np.all(self.density > 0):
            raise ValueError("metric density must be positive at every node")

    @property
    def cone_factor_exponent(self) -> float:
        return 2 * self.spec.beta - 2

    def phi(self, section: DivisorSection) -> np.ndarray:
        """Conformal log-factor: density = e^phi |s|^(2 beta - 2)."""
        out = np.log(self.density) - self.cone_factor_exponent * section.log_values()
        return fill_cone_node(out, self.spec)

    def area(self) -> float:
        return integrate(self, 1.0)

    def with_potential(self, u: np.ndarray, label: str = "") -> "SurfaceMetric":
        """omega + i ddbar u."""
        return SurfaceMetric(self.spec, self.density + 0.5 * lap5(u, self.spec.h), label)


def flat_metric(spec: SurfaceSpec, area: float = 1.0) -> SurfaceMetric:
    return SurfaceMetric(spec, np.full((spec.N, spec.N), float(area)), "flat")


def ddbar_density(u: np.ndarray, spec: SurfaceSpec) -> np.ndarray:
    """Density of i ddbar u with respect to dx dy."""
    return 0.5 * lap5(u, spec.h)


def build_reference_metric(spec: SurfaceSpec, delta: float, omega_area: float,
                           section: DivisorSection | None = None) -> SurfaceMetric:
    """omega = Omega + delta i ddbar |s|^(2 beta) with Omega flat of total area ``omega_area``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    section = build_section_norm(spec) if section is None else section
    base = np.full((spec.N, spec.N), float(omega_area))
    if delta == 0:
        return SurfaceMetric(spec, base, "reference")
    density = base + delta * ddbar_density(section.power(2 * spec.beta), spec)
    if not np.all(density > 0):
        raise ValueError(
            f"delta={delta} makes the reference density non-positive "
            f"(min {density.min():.3g}); decrease delta"
        )
    return SurfaceMetric(spec, density, "reference")


def admissible_delta(spec: SurfaceSpec, omega_area: float, section: DivisorSection | None = None,
                     safety: float = 0.5) -> float:
    """``safety`` times the largest delta keeping the reference density positive."""
    section = build_section_norm(spec) if section is None else section
    lap = ddbar_density(section.power(2 * spec.beta), spec)
    worst = -float(lap.min())
    if worst <= 0:
        return float("inf")
    return safety * omega_area / worst


def laplacian(m: SurfaceMetric, u) -> np.ndarray:
    """Delta_g u = (i ddbar u) / omega; non-positive at a strict interior maximum."""
    return lap5(np.asarray(u, dtype=float), m.spec.h) / (2.0 * m.density)


def integrate(m: SurfaceMetric, u) -> float:
    """Cell-weighted sum h^2 sum rho u."""
    u = np.broadcast_to(np.asarray(u, dtype=float), m.density.shape)
    return float(np.sum(m.density * u) * m.spec.h**2)


def mean(m: SurfaceMetric, u) -> float:
    return integrate(m, u) / m.area()


def curvature_density(m: SurfaceMetric) -> np.ndarray:
    """K rho = -(1/2) L log rho at every node (no exclusion)."""
    return -0.5 * lap5(np.log(m.density), m.spec.h)


def gauss_curvature(m: SurfaceMetric, exclude_radius: float | None = None,
                    order: int = 2) -> np.ndarray:
    """K = -(1/2) L log rho / rho; NaN inside the apex collar and at p.

    ``order=4`` swaps in the fourth-order stencil.  Metrics produced by the
    solvers satisfy their equations for the 5-point L, so the fourth-order K is
    the independent measurement of how well they approximate the continuum.
    """
    if order == 2:
        K = curvature_density(m) / m.density
    elif order == 4:
        K = -0.5 * lap5_fourth_order(np.log(m.density), m.spec.h) / m.density
    else:
        raise ValueError("order must be 2 or 4")
    return np.where(cone_mask(m.spec, exclude_radius), K, np.nan)


def ricci_density(m: SurfaceMetric, section: DivisorSection) -> np.ndarray:
    """Curvature density with the divisor term taken in the complement of D.

    K rho = -(1/2) L phi + (1 - beta) sigma, phi = log(rho |s|^(2 - 2 beta)) and
    sigma the smooth form i ddbar log|s|^2; this equals curvature_density off the
    collar and drops the point mass 2 pi (1 - beta) at p.
    """
    spec = m.spec
    return (-0.5 * lap5(m.phi(section), spec.h)
            + (1 - spec.beta) * divisor_form_density(section))


def cone_curvature(m: SurfaceMetric, section: DivisorSection) -> np.ndarray:
    """ricci_density / rho, NaN at the cone node only."""
    K = ricci_density(m, section) / m.density
    K[m.spec.p] = np.nan
    return K


def radial_profile(values: np.ndarray, spec: SurfaceSpec, direction=(1, 0), count: int | None = None):
    """Values along a lattice ray from p: (distances, values)."""
    N = spec.N
    count = N // 2 - 1 if count is None else count
    k = np.arange(1, count + 1)
    i = (spec.p[0] + direction[0] * k) % N
    j = (spec.p[1] + direction[1] * k) % N
    dist = k * np.hypot(*direction) / N
    return dist, values[i, j]


__all__ = [
    "SurfaceSpec", "GridFunction", "lap5_fourth_order", "SurfaceMetric", "DivisorSection", "FINITE",
    "LOG_SINGULAR", "EXCLUDED", "displacement", "distance", "coordinates", "lap5",
    "laplacian_matrix", "fill_cone_node", "cone_mask", "save_grid", "load_grid",
    "section_profile", "build_section_norm", "flat_section", "divisor_form_density",
    "flat_metric", "ddbar_density", "build_reference_metric", "admissible_delta", "laplacian", "integrate",
    "mean", "curvature_density", "gauss_curvature", "ricci_density", "cone_curvature",
    "radial_profile",
]
