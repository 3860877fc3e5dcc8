"""Kernel dispatch: the compiled extension when available, else pure Python.

Set ``SEME_PURE_PYTHON=1`` before import to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("SEME_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

align_table = _impl.align_table
levenshtein = _impl.levenshtein
erase_signs = _impl.erase_signs
