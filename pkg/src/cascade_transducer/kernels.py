"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``CASCADE_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the pure-Python module is used.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("CASCADE_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

rnnt_alpha_beta = _impl.rnnt_alpha_beta
edit_counts = _impl.edit_counts

__all__ = ["BACKEND", "rnnt_alpha_beta", "edit_counts", "_kernels_py"]
