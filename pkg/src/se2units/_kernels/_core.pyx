# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: batched LSTM recurrence and nearest-centroid scan.

Must stay semantically identical to se2units._kernels.pure (gate order,
distance accumulation order, tie rule).
"""

from libc.math cimport exp, tanh
from libc.string cimport memcpy

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


def lstm_batch(cnp.ndarray[cnp.float64_t, ndim=3] x_proj not None,
               cnp.ndarray[cnp.float64_t, ndim=2] w_hh_t not None):
    """Batched LSTM from zero state; see the pure fallback for the contract."""
    cdef Py_ssize_t n_steps = x_proj.shape[0]
    cdef Py_ssize_t batch = x_proj.shape[1]
    cdef Py_ssize_t h4 = x_proj.shape[2]
    cdef Py_ssize_t hidden = h4 // 4
    if w_hh_t.shape[0] != hidden or w_hh_t.shape[1] != h4:
        raise ValueError(
            f"w_hh_t shape ({w_hh_t.shape[0]}, {w_hh_t.shape[1]}) "
            f"inconsistent with gates {h4}")

    x_proj = np.ascontiguousarray(x_proj)
    w_hh_t = np.ascontiguousarray(w_hh_t)

    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((n_steps, batch, hidden))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] h = np.zeros((batch, hidden))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] c = np.zeros((batch, hidden))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gates = np.empty((batch, h4))

    cdef double* xp = <double*> x_proj.data
    cdef double* wp = <double*> w_hh_t.data
    cdef double* hp = <double*> h.data
    cdef double* cp = <double*> c.data
    cdef double* gp = <double*> gates.data
    cdef double* op = <double*> out.data

    # dgemm is column-major; row-major C(m,n) = A(m,k) @ B(k,n) maps to
    # dgemm('N','N', n, m, k, B, A, C).
    cdef int m_ = <int> h4, n_ = <int> batch, k_ = <int> hidden
    cdef double one = 1.0
    cdef char trans = b'N'

    cdef Py_ssize_t t, b, j, base, row
    cdef double cval
    with nogil:
        for t in range(n_steps):
            # gates = x_proj[t] + h @ w_hh_t
            memcpy(gp, xp + t * batch * h4, batch * h4 * sizeof(double))
            if hidden > 0:
                dgemm(&trans, &trans, &m_, &n_, &k_,
                      &one, wp, &m_, hp, &k_, &one, gp, &m_)
            # simple contiguous passes so the compiler can vectorize exp/tanh
            for b in range(batch):
                base = b * h4
                for j in range(2 * hidden):        # input + forget gates
                    gp[base + j] = 1.0 / (1.0 + exp(-gp[base + j]))
                for j in range(2 * hidden, 3 * hidden):   # cell candidate
                    gp[base + j] = tanh(gp[base + j])
                for j in range(3 * hidden, 4 * hidden):   # output gate
                    gp[base + j] = 1.0 / (1.0 + exp(-gp[base + j]))
                row = b * hidden
                for j in range(hidden):
                    cval = (gp[base + hidden + j] * cp[row + j]
                            + gp[base + j] * gp[base + 2 * hidden + j])
                    cp[row + j] = cval
                    hp[row + j] = gp[base + 3 * hidden + j] * tanh(cval)
                memcpy(op + (t * batch + b) * hidden, hp + row,
                       hidden * sizeof(double))
    return out


def nearest_centroid(cnp.ndarray[cnp.float64_t, ndim=2] x not None,
                     cnp.ndarray[cnp.float64_t, ndim=2] centroids not None):
    """Nearest centroid per row, squared Euclidean, ties to lowest index."""
    x = np.ascontiguousarray(x)
    centroids = np.ascontiguousarray(centroids)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t k = centroids.shape[0]
    if centroids.shape[1] != d:
        raise ValueError(f"dim mismatch: rows {d} vs centroids {centroids.shape[1]}")

    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef double* xp = <double*> x.data
    cdef double* cp = <double*> centroids.data
    cdef long long* op = <long long*> out.data

    cdef Py_ssize_t i, j, dim, best
    cdef double dist, best_dist, diff
    with nogil:
        for i in range(n):
            best = 0
            best_dist = 0.0
            for j in range(k):
                dist = 0.0
                for dim in range(d):
                    diff = xp[i * d + dim] - cp[j * d + dim]
                    dist += diff * diff
                if j == 0 or dist < best_dist:
                    best_dist = dist
                    best = j
            op[i] = best
    return out
