"""Kernel backend selection: compiled extension with pure-Python fallback.

The compiled module is preferred when importable; set SFTRACK_PURE_PYTHON=1
to force the fallback. Both expose the same functions with bit-identical
results (see tests/test_backends.py and benchmarks/bench_kernels.py).
"""
from __future__ import annotations

import os

if os.environ.get("SFTRACK_PURE_PYTHON"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels

BACKEND_NAME: str = kernels.NAME
