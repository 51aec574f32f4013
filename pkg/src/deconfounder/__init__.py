"""Causal inference with multiple causes via a substitute confounder."""

from ._accel import backend, set_backend, use_backend
from .errors import (ConvergenceError, DataParseError, DataValidationError, DeconfounderError,
                     DivergenceError, RankDeficiencyError, SchemaError, SpecError)
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "DataParseError", "DataValidationError", "DeconfounderError",
    "DivergenceError", "RankDeficiencyError", "RngStream", "SchemaError", "SpecError",
    "backend", "set_backend", "use_backend",
]
