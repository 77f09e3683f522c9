# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled registration kernels for permutation-group actions.

A finite action is given by its permutation table ``perm`` of shape (G, N):
``(g . x)[k] = x[perm[g, k]]``, with row 0 the identity.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def finite_sup_inner(const double[:, ::1] X, const double[::1] m,
                     const cnp.intp_t[:, ::1] perm, double rtol):
    """Per row of X, the best element index and its inner product with m."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t N = X.shape[1]
    cdef Py_ssize_t G = perm.shape[0]
    cdef Py_ssize_t i, g, k, best_g
    cdef double s, best, thr, xnorm2, mnorm
    idx_arr = np.empty(n, dtype=np.intp)
    sup_arr = np.empty(n, dtype=np.float64)
    vals_arr = np.empty(G, dtype=np.float64)
    cdef cnp.intp_t[::1] idx = idx_arr
    cdef double[::1] sup = sup_arr
    cdef double[::1] vals = vals_arr

    mnorm = 0.0
    for k in range(N):
        mnorm += m[k] * m[k]
    mnorm = sqrt(mnorm)

    with nogil:
        for i in range(n):
            xnorm2 = 0.0
            for k in range(N):
                xnorm2 += X[i, k] * X[i, k]
            best = -INFINITY
            for g in range(G):
                s = 0.0
                for k in range(N):
                    s = s + m[k] * X[i, perm[g, k]]
                vals[g] = s
                if s > best:
                    best = s
            thr = best - rtol * sqrt(xnorm2) * mnorm
            best_g = 0
            for g in range(G):
                if vals[g] >= thr:
                    best_g = g
                    break
            idx[i] = best_g
            sup[i] = vals[best_g]
    return idx_arr, sup_arr


def finite_gather(const double[:, ::1] X, const cnp.intp_t[:, ::1] perm,
                  const cnp.intp_t[::1] idx):
    """Rows of X moved by their assigned elements: out[i] = idx[i] . X[i]."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t N = X.shape[1]
    cdef Py_ssize_t i, k, g
    out_arr = np.empty((n, N), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            g = idx[i]
            for k in range(N):
                out[i, k] = X[i, perm[g, k]]
    return out_arr
