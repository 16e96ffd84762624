"""Kernel backend selection.

The env var RFSPLAT_KERNELS picks the implementation of the hot loops:

  auto   (default) numba if importable, else pure numpy
  numba  require the jitted backend
  numpy  force the vectorized pure-numpy fallback

Both backends implement the same contracts; bench/kernel_bench.py compares
their throughput.
"""
from __future__ import annotations

import os

_choice = os.environ.get("RFSPLAT_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"RFSPLAT_KERNELS must be auto/numba/numpy, got {_choice!r}")

if _choice == "numpy":
    from . import numpy_backend as _backend
else:
    try:
        from . import numba_backend as _backend
    except ImportError:
        if _choice == "numba":
            raise
        from . import numpy_backend as _backend

BACKEND = _backend.NAME
segment_hits = _backend.segment_hits
segment_hits_brute = _backend.segment_hits_brute
graph_forward = _backend.graph_forward
graph_loss_grad = _backend.graph_loss_grad


def get_backend(name: str):
    """Explicit backend module lookup (used by the benchmark)."""
    if name == "numpy":
        from . import numpy_backend
        return numpy_backend
    if name == "numba":
        from . import numba_backend
        return numba_backend
    raise ValueError(f"unknown backend {name!r}")
