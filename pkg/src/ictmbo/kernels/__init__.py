"""Hot numeric kernels for the three-layer ReLU proxy.

Two interchangeable backends share one calling convention: a flat float64
parameter vector ``theta`` plus the input width ``d`` and hidden width ``h``.
The numba backend is used when numba imports cleanly, unless the environment
variable ``ICTMBO_DISABLE_NUMBA`` is set to a truthy value (``NUMBA_DISABLE_JIT``
is honoured too). Both backends stay importable so they can be cross-checked
and benchmarked against each other.
"""
import os

from . import _numpy as numpy_backend


def _numba_requested() -> bool:
    for var in ("ICTMBO_DISABLE_NUMBA", "NUMBA_DISABLE_JIT"):
        if os.environ.get(var, "").strip().lower() not in ("", "0", "false", "no"):
            return False
    return True


def load_numba_backend():
    """Import the numba backend, or return ``None`` if numba is unavailable."""
    try:
        from . import _numba
    except ImportError:
        return None
    return _numba


numba_backend = load_numba_backend() if _numba_requested() else None

if numba_backend is not None:
    active = numba_backend
    BACKEND = "numba"
else:
    active = numpy_backend
    BACKEND = "numpy"

n_params = numpy_backend.n_params
forward = active.forward
mse_value_and_grad = active.mse_value_and_grad
input_grad = active.input_grad
sample_grad_dots = active.sample_grad_dots
adam_update = active.adam_update
meta_finetune = active.meta_finetune

__all__ = [
    "BACKEND",
    "adam_update",
    "forward",
    "input_grad",
    "load_numba_backend",
    "meta_finetune",
    "mse_value_and_grad",
    "n_params",
    "numpy_backend",
    "numba_backend",
    "sample_grad_dots",
]
