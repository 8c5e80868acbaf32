"""Kernel backend selection.

The hot kernels (matmul, bilinear resize, Adam update) exist twice: a
compiled Cython extension and a numpy fallback with the same numeric
contract. ``LDAG_BACKEND`` forces the choice:

* ``compiled`` — require the extension, raise if missing
* ``python``   — force the fallback
* unset/``auto`` — compiled when importable, fallback otherwise

matmul always routes through the numpy fallback: its BLAS beats a naive
compiled loop by an order of magnitude at these sizes (see
benchmarks/bench_backends.py), so the extension only owns the kernels
where it measurably wins (bilinear resize, fused Adam).
"""

import os

from . import py_kernels

_requested = os.environ.get("LDAG_BACKEND", "auto").lower()

if _requested == "python":
    _impl = py_kernels
elif _requested in ("auto", "compiled"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = py_kernels
else:
    raise ValueError(f"unknown LDAG_BACKEND value: {_requested!r}")

NAME = _impl.NAME
matmul = py_kernels.matmul
bilinear_fwd = _impl.bilinear_fwd
bilinear_bwd = _impl.bilinear_bwd
adam_step = _impl.adam_step
