# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar-loop kernels.

Every function here has a pure-Python twin in ``_pykernels`` with the same
signature and bit-identical results; ``gndv.kernels`` picks one at import.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, log, sin, sqrt
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.1102230246251565e-16


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def splitmix64_fill(uint64_t seed, uint64_t counter, Py_ssize_t n):
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = _mix(seed + (counter + <uint64_t>(i + 1)) * GOLDEN)
    return out


def box_muller(const uint64_t[::1] bits):
    cdef Py_ssize_t n = bits.shape[0] // 2
    out = np.empty(2 * n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double u1, u2, r, theta
    for i in range(n):
        # u1 in (0, 1] keeps log finite
        u1 = <double>((bits[2 * i] >> 11) + 1) * INV_2_53
        u2 = <double>(bits[2 * i + 1] >> 11) * INV_2_53
        r = sqrt(-2.0 * log(u1))
        theta = TWO_PI * u2
        o[2 * i] = r * cos(theta)
        o[2 * i + 1] = r * sin(theta)
    return out


def permutation(uint64_t seed, uint64_t counter, Py_ssize_t n):
    """Fisher-Yates over arange(n); returns (perm, counter_after)."""
    perm = np.arange(n, dtype=np.int64)
    cdef int64_t[::1] p = perm
    cdef Py_ssize_t i
    cdef uint64_t bound, threshold, x
    cdef int64_t tmp, j
    for i in range(n - 1, 0, -1):
        bound = <uint64_t>(i + 1)
        threshold = (0 - bound) % bound
        while True:
            counter += 1
            x = _mix(seed + counter * GOLDEN)
            if x >= threshold:
                break
        j = <int64_t>(x % bound)
        tmp = p[i]
        p[i] = p[j]
        p[j] = tmp
    return perm, counter


def scatter_add_columns(double[:, ::1] dst, const int64_t[::1] cols, const double[:, ::1] src):
    cdef Py_ssize_t r, b
    cdef Py_ssize_t rows = src.shape[0], batch = src.shape[1]
    for b in range(batch):
        for r in range(rows):
            dst[r, cols[b]] += src[r, b]


def knn_vote(const int64_t[:, ::1] neighbor_labels, Py_ssize_t n_classes):
    cdef Py_ssize_t q, j, c
    cdef Py_ssize_t nq = neighbor_labels.shape[0], k = neighbor_labels.shape[1]
    out = np.empty(nq, dtype=np.int64)
    cdef int64_t[::1] o = out
    counts_arr = np.zeros(n_classes, dtype=np.int64)
    cdef int64_t[::1] counts = counts_arr
    cdef int64_t best
    for q in range(nq):
        counts[:] = 0
        for j in range(k):
            counts[neighbor_labels[q, j]] += 1
        best = 0
        for c in range(1, n_classes):
            if counts[c] > counts[best]:
                best = c
        o[q] = best
    return out


def trust_penalty(const int64_t[:, ::1] high_rank_of_low_nbrs, Py_ssize_t k):
    """Sum of (rank - k) over embedding neighbours whose high-space rank exceeds k."""
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = high_rank_of_low_nbrs.shape[0], kk = high_rank_of_low_nbrs.shape[1]
    cdef int64_t total = 0, r
    for i in range(n):
        for j in range(kk):
            r = high_rank_of_low_nbrs[i, j]
            if r > k:
                total += r - k
    return total
