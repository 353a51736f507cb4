"""Backend selection for the distance and masked-min kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Setting ``PRECISE_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("PRECISE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def _prep(*arrays):
    dtype = np.result_type(*arrays)
    if dtype not in (np.float32, np.float64):
        dtype = np.float64
    return [np.ascontiguousarray(a, dtype=dtype) for a in arrays]


def pairwise_distances(a, b, eps=1e-12, impl=None):
    a, b = _prep(a, b)
    return (impl or _impl).pairwise_distances(a, b, float(eps))


def pairwise_distances_backward(a, b, dist, gout, impl=None):
    a, b, dist, gout = _prep(a, b, dist, gout)
    return (impl or _impl).pairwise_distances_backward(a, b, dist, gout)


def masked_min(x, mask=None, axis=1, impl=None):
    (x,) = _prep(x)
    if x.ndim != 2 or axis not in (0, 1):
        raise ValueError("masked_min takes a 2-D array and axis 0 or 1")
    if mask is None:
        mask = np.ones(x.shape, dtype=np.uint8)
    else:
        mask = np.ascontiguousarray(mask, dtype=np.uint8)
    return (impl or _impl).masked_min(x, mask, int(axis))


def implementations():
    """Map of backend name to module, for benchmarks and parity tests."""
    impls = {"python": _kernels_py}
    if _compiled is not None:
        impls["compiled"] = _compiled
    return impls
