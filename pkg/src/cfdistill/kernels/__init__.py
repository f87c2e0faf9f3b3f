"""MLP kernel backends.

Two interchangeable implementations exist: a Cython extension and a pure
numpy fallback. Selection happens once at import time and is controlled by
the CFDISTILL_BACKEND environment variable:

    auto      use the compiled extension when importable, else numpy (default)
    compiled  require the extension, fail loudly if missing
    python    force the numpy fallback

`get_backend(name)` returns a specific module for cross-checks and benchmarks.
"""
from __future__ import annotations

import os

from . import _numpy
from ._numpy import ACT_TANH, ACT_SOFTPLUS

_choice = os.environ.get("CFDISTILL_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "compiled", "python"):
    raise ValueError(
        f"CFDISTILL_BACKEND must be auto, compiled or python, got {_choice!r}"
    )

if _choice == "python":
    _impl = _numpy
    BACKEND = "python"
else:
    try:
        from . import _compiled as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _numpy
        BACKEND = "python"

forward = _impl.forward
input_grad = _impl.input_grad
param_grads_output_seed = _impl.param_grads_output_seed
param_grads_directional = _impl.param_grads_directional


def get_backend(name: str):
    """Return a specific backend module ("python" or "compiled")."""
    if name == "python":
        return _numpy
    if name == "compiled":
        from . import _compiled

        return _compiled
    raise ValueError(f"unknown backend {name!r}")


__all__ = [
    "ACT_TANH",
    "ACT_SOFTPLUS",
    "BACKEND",
    "forward",
    "input_grad",
    "param_grads_output_seed",
    "param_grads_directional",
    "get_backend",
]
