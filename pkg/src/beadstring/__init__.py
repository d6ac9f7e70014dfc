"""Boundary control of a string carrying interior point masses."""
import os as _os

# BLAS pools are sized when numpy loads, so the cap has to be set first
_threads = _os.environ.get("BEADSTRING_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .model import (ConfigError, NumericalFailure, Potential, PreconditionError, SampledFunction,  # noqa: E402
                    StateSnapshot, StringSystem, load_system, uniform_system, validate_system)

__all__ = [
    "ConfigError", "NumericalFailure", "Potential", "PreconditionError", "SampledFunction",
    "StateSnapshot", "StringSystem", "load_system", "uniform_system", "validate_system",
]
__version__ = "0.1.0"
