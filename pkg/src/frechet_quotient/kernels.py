"""Backend selection for the batched registration kernels.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``FRECHET_QUOTIENT_PURE`` is set to a non-empty value,
the numpy implementation is used. Both expose the same two functions.
"""
import os

import numpy as np

from . import _pykernels

if os.environ.get("FRECHET_QUOTIENT_PURE"):
    _compiled = None
else:
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"
_impl = _compiled if _compiled is not None else _pykernels


def finite_sup_inner(X, m, perm, rtol, backend=None):
    """Best group element per row of ``X`` for the inner product with ``m``.

    Among elements whose inner product is within ``rtol * |x| * |m|`` of the
    maximum, the smallest index wins. Returns ``(idx, sup)``.
    """
    impl = _select(backend)
    X = np.ascontiguousarray(X, dtype=np.float64)
    m = np.ascontiguousarray(m, dtype=np.float64)
    return impl.finite_sup_inner(X, m, perm, float(rtol))


def finite_gather(X, perm, idx, backend=None):
    """Apply element ``idx[i]`` to row ``i`` of ``X``."""
    impl = _select(backend)
    X = np.ascontiguousarray(X, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.intp)
    return impl.finite_gather(X, perm, idx)


def _select(backend):
    if backend is None:
        return _impl
    if backend == "numpy":
        return _pykernels
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return _compiled
    raise ValueError(f"unknown backend {backend!r}")
