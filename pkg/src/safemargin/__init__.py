"""Safety margins of parameterized ODE systems from trajectory sensitivities.

The core quantity is ``G(p)``, the reciprocal of the peak 1-norm of the
trajectory sensitivity after a disturbance.  It is positive inside the
recovery region and drops to zero on its boundary, so boundary points and
margins can be found by root finding and constrained optimisation on ``G``.
"""

from .boundary import (BoundaryPoint, MarginResult, backtrack, boundary_1d, margin_sqp,
                       sqp_step, tangent, trace_2d)
from .equilibrium import SepInfo, find_sep
from .gfun import (GEvaluation, RecoveryStatus, classify, classify_many, eval_G,
                   eval_G_many, grad_G)
from .model import Metric, SystemModel, build_model, load_config
from .oracle import brute_margin, classify_grid, ray_bisect

__all__ = [
    "BoundaryPoint", "GEvaluation", "MarginResult", "Metric", "RecoveryStatus", "SepInfo",
    "SystemModel", "backtrack", "boundary_1d", "brute_margin", "build_model", "classify",
    "classify_grid", "classify_many", "eval_G", "eval_G_many", "find_sep", "grad_G",
    "load_config", "margin_sqp", "ray_bisect", "sqp_step", "tangent", "trace_2d",
    "data_path",
]


def data_path(name):
    """Path of a config shipped with the package (``"smib.yaml"``, ``"scalar.yaml"``)."""
    from importlib.resources import files
    return str(files(__package__) / "data" / name)
