"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when
``FCDN_PURE_PYTHON=1`` is set) the numpy implementations are used.
Both expose the same functions with the same semantics.
"""
import os

from . import _pykernels

python_backend = _pykernels

if os.environ.get("FCDN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

try:
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

BACKEND = _impl.BACKEND
fir_filter = _impl.fir_filter
plv_pairs = _impl.plv_pairs
conv_time_forward = _impl.conv_time_forward
conv_time_backward = _impl.conv_time_backward

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "fir_filter",
    "plv_pairs",
    "conv_time_forward",
    "conv_time_backward",
]
