"""Kernel dispatch: compiled extension if built, pure Python otherwise.

Set ARTIMIT_PURE=1 to force the fallback (used by the benchmark and to test
both paths).
"""

import os

from . import _kernels_py

if os.environ.get("ARTIMIT_PURE") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

dtw_accumulate = _impl.dtw_accumulate
autocorr_curve = _impl.autocorr_curve
