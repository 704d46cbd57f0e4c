"""Exception types shared by the solvers."""
from __future__ import annotations


class ConvergenceError(RuntimeError):
    """An iteration stopped without meeting its tolerance.

    ``history`` holds the residual norms (or a damping trace) seen so far.
    """

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


class CokernelObstruction(ValueError):
    """The right-hand side has a component along the cokernel (the constants)."""


class AdmissibilityError(ValueError):
    """A potential or target left the admissible neighbourhood."""


class ConfigError(ValueError):
    """Invalid run configuration."""
