"""Backend selection for the numerical kernels.

The compiled extension is used when it imports; setting the environment
variable ``PFNET_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("PFNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

log_convolve = _impl.log_convolve
char_sum = _impl.char_sum
# np.convolve reaches BLAS dot products and beats the compiled loop at every
# size measured by benchmarks/bench_kernels.py, so it is used on both backends
convolve_truncated = _pykernels.convolve_truncated

__all__ = ["BACKEND", "log_convolve", "convolve_truncated", "char_sum"]
