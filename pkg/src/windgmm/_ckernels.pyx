# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: consensus rounds and mixture log-densities.

Mirrors the signatures and semantics of ``windgmm._pykernels``; see the
docstrings there.  The consensus loop runs entirely in C so that the
many small synchronous rounds avoid per-round interpreter overhead.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

BACKEND_NAME = "cython"


def component_loglik(const double[:, ::1] points, const double[:, ::1] means,
                     const double[:, :, ::1] precisions,
                     const double[::1] log_norms, out=None):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t j_count = means.shape[0]
    if out is None:
        out = np.empty((n, j_count), dtype=np.float64)
    cdef double[:, ::1] res = out
    cdef Py_ssize_t i, j
    cdef double dx, dy, quad, p00, p01, p11, base
    with nogil:
        for j in range(j_count):
            p00 = precisions[j, 0, 0]
            p01 = precisions[j, 0, 1]
            p11 = precisions[j, 1, 1]
            base = log_norms[j]
            for i in range(n):
                dx = points[i, 0] - means[j, 0]
                dy = points[i, 1] - means[j, 1]
                quad = p00 * dx * dx + 2.0 * p01 * dx * dy + p11 * dy * dy
                res[i, j] = base - 0.5 * quad
    return np.asarray(out)


def consensus_rounds(double[:, ::1] state, const long[::1] indptr,
                     const long[::1] indices, double eta, double tol,
                     long max_iter, long vn_index):
    cdef Py_ssize_t n_nodes = state.shape[0]
    cdef Py_ssize_t width = state.shape[1]
    if width == 0 or n_nodes == 1:
        return 0, True, 0.0

    buf = np.empty((n_nodes, width), dtype=np.float64)
    cdef double[:, ::1] new = buf
    cdef Py_ssize_t m, p, k
    cdef long rounds = 0, it
    cdef long start, stop, deg
    cdef double acc, change, scale, diff, val
    cdef double last_change = 0.0
    cdef bint converged = False

    with nogil:
        for it in range(max_iter):
            for m in range(n_nodes):
                start = indptr[m]
                stop = indptr[m + 1]
                deg = stop - start
                if m == vn_index:
                    if deg == 0:
                        for p in range(width):
                            new[m, p] = state[m, p]
                    else:
                        for p in range(width):
                            acc = 0.0
                            for k in range(start, stop):
                                acc += state[indices[k], p]
                            new[m, p] = acc / deg
                else:
                    for p in range(width):
                        acc = 0.0
                        for k in range(start, stop):
                            acc += state[indices[k], p]
                        new[m, p] = state[m, p] + eta * (acc - deg * state[m, p])
            rounds += 1
            change = 0.0
            scale = 1.0
            for m in range(n_nodes):
                for p in range(width):
                    val = fabs(new[m, p])
                    if val > scale:
                        scale = val
                    diff = fabs(new[m, p] - state[m, p])
                    if diff > change:
                        change = diff
                    state[m, p] = new[m, p]
            last_change = change / scale
            if last_change <= tol:
                converged = True
                break

    return rounds, bool(converged), last_change
