"""Hot kernels with a compiled core and a numpy fallback.

The compiled extension ``_core`` is used when it can be imported; setting
``FRACPM_PURE_PYTHON=1`` forces the fallback.  ``FRACPM_THREADS`` caps the
number of worker threads.
"""

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("FRACPM_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _core as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def worker_count() -> int:
    """Worker cap from ``FRACPM_THREADS`` (default: all CPUs)."""
    raw = os.environ.get("FRACPM_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"FRACPM_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError("FRACPM_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def convection_rhs(triangles, B, grad_basis, area, AK, rho, c, delta, L,
                   num_threads=None, backend=None):
    if num_threads is None:
        num_threads = worker_count()
    use = backend or BACKEND
    if use == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled.convection_rhs(np.ascontiguousarray(triangles, dtype=np.int64),
                                        B, grad_basis, area, AK, rho, c,
                                        float(delta), float(L), int(num_threads))
    return _fallback.convection_rhs(triangles, B, grad_basis, area, AK, rho, c,
                                    delta, L)
