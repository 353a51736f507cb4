# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the prototype-metric layer.

Mirrors ``precise._kernels_py`` function for function. Both accept C-contiguous
2-D float32 or float64 arrays and return arrays of the same dtype.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt

cnp.import_array()


def pairwise_distances(floating[:, ::1] a, floating[:, ::1] b, double eps):
    cdef Py_ssize_t p = a.shape[0], q = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, t
    cdef double s, diff
    if b.shape[1] != d:
        raise ValueError(f"feature extent mismatch: {d} vs {b.shape[1]}")
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((p, q), dtype=dtype)
    cdef floating[:, ::1] o = out
    with nogil:
        for i in range(p):
            for j in range(q):
                s = 0.0
                for t in range(d):
                    diff = <double>a[i, t] - <double>b[j, t]
                    s = s + diff * diff
                o[i, j] = <floating>sqrt(s + eps)
    return out


def pairwise_distances_backward(floating[:, ::1] a, floating[:, ::1] b,
                                floating[:, ::1] dist, floating[:, ::1] gout):
    cdef Py_ssize_t p = a.shape[0], q = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, t
    cdef double c, g
    dtype = np.float32 if floating is float else np.float64
    ga_arr = np.zeros((p, d), dtype=dtype)
    gb_arr = np.zeros((q, d), dtype=dtype)
    cdef floating[:, ::1] ga = ga_arr
    cdef floating[:, ::1] gb = gb_arr
    with nogil:
        for i in range(p):
            for j in range(q):
                c = <double>gout[i, j] / <double>dist[i, j]
                if c == 0.0:
                    continue
                for t in range(d):
                    g = c * (<double>a[i, t] - <double>b[j, t])
                    ga[i, t] = ga[i, t] + <floating>g
                    gb[j, t] = gb[j, t] - <floating>g
    return ga_arr, gb_arr


def masked_min(floating[:, ::1] x, const unsigned char[:, ::1] mask, int axis):
    """Min along ``axis`` (0 or 1) over entries where ``mask`` is nonzero.

    Ties go to the lowest index. Raises ValueError if any lane has no
    admissible entry.
    """
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t i, j, best
    cdef floating v
    if mask.shape[0] != r or mask.shape[1] != c:
        raise ValueError("mask shape does not match input")
    dtype = np.float32 if floating is float else np.float64
    cdef Py_ssize_t lanes = r if axis == 1 else c
    cdef Py_ssize_t length = c if axis == 1 else r
    vals_arr = np.empty(lanes, dtype=dtype)
    idx_arr = np.empty(lanes, dtype=np.int64)
    cdef floating[::1] vals = vals_arr
    cdef long long[::1] idx = idx_arr
    cdef bint empty = False
    with nogil:
        for i in range(lanes):
            best = -1
            for j in range(length):
                if axis == 1:
                    if mask[i, j] and (best < 0 or x[i, j] < v):
                        v = x[i, j]
                        best = j
                else:
                    if mask[j, i] and (best < 0 or x[j, i] < v):
                        v = x[j, i]
                        best = j
            if best < 0:
                empty = True
                break
            vals[i] = v
            idx[i] = best
    if empty:
        raise ValueError("min over an empty extent")
    return vals_arr, idx_arr
