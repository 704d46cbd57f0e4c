"""Desk-scale Kahler cone metrics: model geometry, reference metrics on a torus
with one cone point, Ricci flattening and a continuity-method KE solver."""
from .cone_geometry import ConeParams, ModelPoint, cone_distance, holder_seminorm, model_metric
from .cone_surface import (SurfaceMetric, SurfaceSpec, build_reference_metric, build_section_norm,
                           cone_curvature, gauss_curvature)
from .errors import AdmissibilityError, CokernelObstruction, ConfigError, ConvergenceError
from .ke_continuity import KEProblem, KEResult, ke_solve
from .linear_solver import LinearProblem, fredholm_diagnostics, solve_poisson, solve_shifted
from .local_models import LocalData, gaussian_curvature_Ka, reference_components, sturm_pullback
from .ricci_bound import MAFunctionalContext, SmoothingParams, flatten_ricci, smooth_approximation

__version__ = "0.1.0"

__all__ = [
    "ConeParams", "ModelPoint", "cone_distance", "holder_seminorm", "model_metric",
    "SurfaceMetric", "SurfaceSpec", "build_reference_metric", "build_section_norm",
    "cone_curvature", "gauss_curvature", "AdmissibilityError", "CokernelObstruction",
    "ConfigError", "ConvergenceError", "KEProblem", "KEResult", "ke_solve", "LinearProblem",
    "fredholm_diagnostics", "solve_poisson", "solve_shifted", "LocalData",
    "gaussian_curvature_Ka", "reference_components", "sturm_pullback", "MAFunctionalContext",
    "SmoothingParams", "flatten_ricci", "smooth_approximation",
]
