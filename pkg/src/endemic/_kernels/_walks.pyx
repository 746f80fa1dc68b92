# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled random-walk and co-occurrence kernels.

Semantics are identical to :mod:`endemic._kernels._pure`; both consume the
same pre-drawn uniforms so walks match element for element.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64


def teleport_walks(const i64[::1] indptr, const i64[::1] indices,
                   const i64[::1] starts, Py_ssize_t length, double teleport,
                   const double[:, ::1] coins, const double[:, ::1] picks):
    cdef Py_ssize_t n_nodes = indptr.shape[0] - 1
    cdef Py_ssize_t n_walks = starts.shape[0]
    out_arr = np.empty((n_walks, length + 1), dtype=np.int64)
    cdef i64[:, ::1] out = out_arr
    cdef Py_ssize_t w, s, cur, deg, k
    with nogil:
        for w in range(n_walks):
            cur = starts[w]
            out[w, 0] = cur
            for s in range(length):
                deg = indptr[cur + 1] - indptr[cur]
                if deg == 0 or coins[w, s] < teleport:
                    k = <Py_ssize_t>(picks[w, s] * n_nodes)
                    if k >= n_nodes:
                        k = n_nodes - 1
                    cur = k
                else:
                    k = <Py_ssize_t>(picks[w, s] * deg)
                    if k >= deg:
                        k = deg - 1
                    cur = indices[indptr[cur] + k]
                out[w, s + 1] = cur
    return out_arr


def cooccurrence_pairs(const i64[:, ::1] walks, Py_ssize_t window):
    cdef Py_ssize_t n_walks = walks.shape[0]
    cdef Py_ssize_t L = walks.shape[1]
    cdef Py_ssize_t w, i, j, lo, hi, m = 0
    with nogil:
        for w in range(n_walks):
            for i in range(L):
                lo = i - window if i >= window else 0
                hi = i + window + 1 if i + window + 1 < L else L
                for j in range(lo, hi):
                    if j != i and walks[w, i] != walks[w, j]:
                        m += 1
    out_arr = np.empty((m, 2), dtype=np.int64)
    cdef i64[:, ::1] out = out_arr
    m = 0
    with nogil:
        for w in range(n_walks):
            for i in range(L):
                lo = i - window if i >= window else 0
                hi = i + window + 1 if i + window + 1 < L else L
                for j in range(lo, hi):
                    if j != i and walks[w, i] != walks[w, j]:
                        out[m, 0] = walks[w, i]
                        out[m, 1] = walks[w, j]
                        m += 1
    return out_arr
