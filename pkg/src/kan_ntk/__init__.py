"""Two-layer Kolmogorov-Arnold networks with exact derivatives and NTK diagnostics."""

from ._backend import BACKEND
from .basis import BasisSpec, TransformSpec, basis_eval, transform_eval, validate_boundedness
from .model import Dataset, KanParams, KanShape, forward, init_params, residuals

__all__ = [
    "BACKEND",
    "BasisSpec",
    "Dataset",
    "KanParams",
    "KanShape",
    "TransformSpec",
    "basis_eval",
    "forward",
    "init_params",
    "residuals",
    "transform_eval",
    "validate_boundedness",
]

__version__ = "0.1.0"
