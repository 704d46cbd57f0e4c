"""Linear theory on the testbed: Delta_g u = h and (Delta_g - c) u = h.

Delta_g = D^-1 (L / 2) with D = diag(rho), so both problems are symmetric
after multiplying by rho.  The Poisson problem has the constants as kernel and
cokernel (index 0); it is solved exactly in Fourier space because L is a
circulant.  The shifted problem has no obstruction and goes to conjugate
gradients preconditioned by the same Fourier solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cone_surface import SurfaceMetric, lap5, laplacian_matrix
from .errors import CokernelObstruction, ConvergenceError

TOL_COMPAT = 1e-8


@dataclass
class LinearProblem:
    metric: SurfaceMetric
    rhs: np.ndarray
    shift: float = 0.0
    tol: float | None = None          # default 1e-10 * |rhs|_inf
    max_iter: int = 50                # CG restarts for the shifted solve
    tol_compat: float = TOL_COMPAT

    def __post_init__(self):
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.rhs.shape != self.metric.density.shape:
            raise ValueError("rhs shape does not match the grid")
        if self.shift < 0:
            raise ValueError("shift must be non-negative")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive")

    @property
    def tolerance(self) -> float:
        if self.tol is not None:
            return self.tol
        scale = float(np.max(np.abs(self.rhs)))
        return 1e-10 * scale if scale > 0 else 1e-300


def _symbol(N: int, h: float) -> np.ndarray:
    """Eigenvalues of the periodic 5-point L on the rfft2 grid."""
    k1 = 2 * np.pi * np.fft.fftfreq(N)
    k2 = 2 * np.pi * np.fft.rfftfreq(N)
    return (2 * np.cos(k1)[:, None] + 2 * np.cos(k2)[None, :] - 4) / (h * h)


def poisson_fft(b: np.ndarray, h: float) -> np.ndarray:
    """Solve (1/2) L u = b - mean(b) exactly; the result has zero plain mean."""
    N = b.shape[0]
    lam = 0.5 * _symbol(N, h)
    bh = np.fft.rfft2(b)
    lam[0, 0] = 1.0
    bh[0, 0] = 0.0
    return np.fft.irfft2(bh / lam, s=b.shape)


def compatibility_defect(m: SurfaceMetric, rhs) -> float:
    """|int h dA| / (area |h|_inf): zero exactly on the range of Delta_g."""
    rhs = np.asarray(rhs, dtype=float)
    scale = float(np.max(np.abs(rhs)))
    if scale == 0:
        return 0.0
    total = float(np.sum(m.density * rhs)) * m.spec.h**2
    return abs(total) / (m.area() * scale)


def _weighted_mean(m: SurfaceMetric, u: np.ndarray) -> float:
    return float(np.sum(m.density * u) / np.sum(m.density))


def solve_poisson(problem: LinearProblem) -> np.ndarray:
    """Mean-zero solution of Delta_g u = h, or CokernelObstruction.

    A defect below tol_compat is admitted, so the residual is certified against
    the range component h - mean_rho(h); the dropped constant is the certified
    tiny cokernel part.
    """
    m, h = problem.metric, problem.rhs
    if problem.shift != 0:
        raise ValueError("solve_poisson needs shift = 0; use solve_shifted")
    defect = compatibility_defect(m, h)
    if defect >= problem.tol_compat:
        raise CokernelObstruction(
            f"cokernel obstruction: |int h dA| / (area |h|_inf) = {defect:.3e} "
            f">= {problem.tol_compat:.1e}; constants are not in the range of Delta_g"
        )
    h = h - _weighted_mean(m, h)
    b = m.density * h
    u = poisson_fft(b, m.spec.h)
    u -= _weighted_mean(m, u)
    history = [_residual(m, u, 0.0, h)]
    # a few refinement steps absorb FFT roundoff on fine grids
    for _ in range(3):
        if history[-1] < problem.tolerance:
            return u
        r = m.density * (h - lap5(u, m.spec.h) / (2 * m.density))
        u = u + poisson_fft(r - r.mean(), m.spec.h)
        u -= _weighted_mean(m, u)
        history.append(_residual(m, u, 0.0, h))
    if history[-1] < problem.tolerance:
        return u
    raise ConvergenceError(
        f"Poisson residual {history[-1]:.3e} above tolerance {problem.tolerance:.3e}", history
    )


def _residual(m: SurfaceMetric, u, shift: float, h) -> float:
    return float(np.max(np.abs(lap5(u, m.spec.h) / (2 * m.density) - shift * u - h)))


def spd_operator(weight: np.ndarray, h: float) -> sp.csr_matrix:
    """The matrix of diag(weight) - (1/2) L, symmetric positive definite for weight > 0.

    ``h`` must be 1 / N; it is accepted for symmetry with the array operators.
    """
    N = weight.shape[0]
    if abs(h * N - 1) > 1e-12:
        raise ValueError("grid spacing must be 1 / N")
    return (sp.diags(weight.ravel()) - 0.5 * laplacian_matrix(N)).tocsr()


def solve_spd(weight: np.ndarray, b: np.ndarray, h: float, x0=None, certify=None,
              tol: float = 1e-12, max_iter: int = 50, history: list | None = None):
    """Solve (diag(weight) - (1/2) L) x = b by preconditioned conjugate gradients.

    The preconditioner inverts mean(weight) - (1/2) L exactly by FFT, so only
    the variation of the weight is left to CG; the large weights near p affect
    few nodes and cost a handful of extra iterations.  ``certify(x)`` is the
    residual measure that must drop below ``tol`` (default: infinity norm of
    the algebraic residual).  Each restart solves for the correction, which
    keeps the certificate honest when the Krylov recurrence drifts.
    """
    N = weight.shape[0]
    A = spd_operator(weight, h)
    symbol = float(weight.mean()) - 0.5 * _symbol(N, h)
    M = spla.LinearOperator(
        A.shape, dtype=float,
        matvec=lambda r: np.fft.irfft2(np.fft.rfft2(r.reshape(N, N)) / symbol, s=(N, N)).ravel(),
    )
    bv = b.ravel()
    x = np.zeros_like(bv) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    if certify is None:
        certify = lambda xx: float(np.max(np.abs(bv - A @ xx)))
    history = [] if history is None else history
    history.append(certify(x))
    for _ in range(max_iter):
        if history[-1] < tol:
            return x.reshape(b.shape)
        r = bv - A @ x
        rtol = min(max(0.1 * tol / history[-1], 1e-14), 0.1)
        d, _ = spla.cg(A, r, rtol=rtol, atol=0.0, M=M, maxiter=500)
        x = x + d
        history.append(certify(x))
    if history[-1] < tol:
        return x.reshape(b.shape)
    raise ConvergenceError(
        f"CG residual {history[-1]:.3e} above tolerance {tol:.3e} after {max_iter} restarts",
        history,
    )


def solve_shifted(problem: LinearProblem, x0=None) -> np.ndarray:
    """Solution of (Delta_g - c) u = h with c > 0; no compatibility condition."""
    m, h, c = problem.metric, problem.rhs, problem.shift
    if c <= 0:
        raise ValueError("solve_shifted needs shift > 0; use solve_poisson")
    return solve_spd(c * m.density, -m.density * h, m.spec.h, x0=x0,
                     certify=lambda x: _residual(m, x.reshape(h.shape), c, h),
                     tol=problem.tolerance, max_iter=problem.max_iter)


def residual_norm(problem: LinearProblem, u) -> float:
    """|(Delta_g - c) u - h|_inf."""
    return _residual(problem.metric, np.asarray(u, dtype=float), problem.shift, problem.rhs)


@dataclass
class FredholmReport:
    kernel_dim: int
    cokernel_dim: int
    smallest_nonzero: float
    eigenvalues: list = field(default_factory=list)
    cokernel_alignment: float = float("nan")  # |cos| between cokernel vector and rho

    @property
    def index(self) -> int:
        return self.kernel_dim - self.cokernel_dim

    def as_dict(self) -> dict:
        return {
            "kernel_dim": self.kernel_dim, "cokernel_dim": self.cokernel_dim,
            "index": self.index, "smallest_nonzero": self.smallest_nonzero,
            "eigenvalues": list(self.eigenvalues),
            "cokernel_alignment": self.cokernel_alignment,
        }


def fredholm_diagnostics(m: SurfaceMetric, count: int = 6, rel_tol: float = 1e-8) -> FredholmReport:
    """Kernel and cokernel of Delta_g by shift-invert Arnoldi/Lanczos near 0.

    Eigenvalues of -Delta_g are those of the pencil (-(1/2) L, diag rho).  An
    eigenvalue counts as zero when it is below ``rel_tol`` times the first
    nonzero one.  The cokernel is the kernel of the transposed matrix
    (L / 2) D^-1, computed separately; its vector should be rho.
    """
    N = m.spec.N
    A = (-0.5 * laplacian_matrix(N)).tocsc()
    D = sp.diags(m.density.ravel()).tocsc()
    v0 = np.ones(N * N) + 0.01 * np.cos(np.arange(N * N))  # fixed start vector
    vals = spla.eigsh(A, k=count, M=D, sigma=-1e-3, which="LM", v0=v0,
                      return_eigenvectors=False)
    vals = np.sort(np.abs(vals))
    nonzero = vals[vals > rel_tol * vals[-1]]
    gap = nonzero[0] if nonzero.size else float("nan")
    kernel = int(np.sum(vals <= rel_tol * gap))

    Bt = (A @ sp.diags(1.0 / m.density.ravel())).tocsc()  # (-Delta_g)^T = (-L/2) D^-1
    cvals, cvecs = spla.eigs(Bt, k=count, sigma=-1e-3, which="LM", v0=v0)
    order = np.argsort(np.abs(cvals))
    cvals, cvecs = np.abs(cvals[order]), cvecs[:, order].real
    cokernel = int(np.sum(cvals <= rel_tol * gap))
    if cokernel:
        v = cvecs[:, 0]
        rho = m.density.ravel()
        align = abs(v @ rho) / (np.linalg.norm(v) * np.linalg.norm(rho))
    else:
        align = float("nan")
    return FredholmReport(kernel, cokernel, float(gap), [float(v) for v in vals], float(align))


__all__ = [
    "LinearProblem", "FredholmReport", "TOL_COMPAT", "poisson_fft", "compatibility_defect",
    "solve_poisson", "solve_shifted", "solve_spd", "spd_operator", "residual_norm",
    "fredholm_diagnostics",
]
