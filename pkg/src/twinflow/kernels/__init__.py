"""Backend dispatch for the hot numeric kernels.

TWINFLOW_BACKEND=numba (default when numba imports) uses the JIT kernels;
TWINFLOW_BACKEND=numpy forces the pure-NumPy path. Both backends expose the
same functions and compute the same math, so a run is reproducible within a
backend and the two agree to float64 roundoff.
"""

import os

from . import numpy_impl

_requested = os.environ.get("TWINFLOW_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"TWINFLOW_BACKEND={_requested!r} not recognized (use 'numba' or 'numpy')"
    )

if _requested == "numpy":
    BACKEND = "numpy"
    _impl = numpy_impl
else:
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise RuntimeError("TWINFLOW_BACKEND=numba but numba is not importable")
        BACKEND = "numpy"
        _impl = numpy_impl

softmax_rows = _impl.softmax_rows
softmax_rows_grad = _impl.softmax_rows_grad
layernorm_rows = _impl.layernorm_rows
layernorm_rows_grad = _impl.layernorm_rows_grad
gelu = _impl.gelu
gelu_grad = _impl.gelu_grad
rope_rotate = _impl.rope_rotate
adamw_update = _impl.adamw_update
