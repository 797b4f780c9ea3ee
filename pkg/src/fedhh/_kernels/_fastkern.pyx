# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled report-simulation kernels.

Must stay bit-for-bit equivalent to ``_numpy.py`` (same splitmix64 draws at
the same counter addresses); the test suite enforces exact equality.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

backend_name = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MULT_A = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MULT_B = 0x94D049BB133111EBULL
cdef double U53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * MULT_A
    z = (z ^ (z >> 27)) * MULT_B
    return z ^ (z >> 31)


cdef inline uint64_t draw64(uint64_t key, uint64_t counter) nogil:
    return mix64(key + (counter + 1) * GOLDEN)


cdef inline double u01(uint64_t u) nogil:
    return <double>(u >> 11) * U53


def uniform_block(key, counters):
    cdef uint64_t k = <uint64_t>(int(key) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] ctr = np.ascontiguousarray(
        counters, dtype=np.uint64
    )
    cdef Py_ssize_t n = ctr.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    with nogil:
        for i in range(n):
            out[i] = u01(draw64(k, ctr[i]))
    return out


def krr_counts(key, user_index, true_index, d, p):
    cdef uint64_t k = <uint64_t>(int(key) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] uidx = np.ascontiguousarray(
        user_index, dtype=np.int64
    )
    cdef cnp.ndarray[cnp.int64_t, ndim=1] true = np.ascontiguousarray(
        true_index, dtype=np.int64
    )
    cdef Py_ssize_t n = uidx.shape[0], i
    cdef int64_t dd = d
    cdef double pp = p
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(dd, dtype=np.int64)
    cdef uint64_t base
    cdef int64_t r
    with nogil:
        for i in range(n):
            base = (<uint64_t>uidx[i]) * 2
            if u01(draw64(k, base)) < pp:
                r = true[i]
            else:
                r = <int64_t>(draw64(k, base + 1) % <uint64_t>(dd - 1))
                if r >= true[i]:
                    r += 1
            counts[r] += 1
    return counts


def oue_counts(key, user_index, true_index, d, q):
    cdef uint64_t k = <uint64_t>(int(key) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] uidx = np.ascontiguousarray(
        user_index, dtype=np.int64
    )
    cdef cnp.ndarray[cnp.int64_t, ndim=1] true = np.ascontiguousarray(
        true_index, dtype=np.int64
    )
    cdef Py_ssize_t n = uidx.shape[0], i
    cdef int64_t dd = d, j
    cdef double qq = q, thresh
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(dd, dtype=np.int64)
    cdef uint64_t row
    with nogil:
        for i in range(n):
            row = (<uint64_t>uidx[i]) * (<uint64_t>dd)
            for j in range(dd):
                thresh = 0.5 if j == true[i] else qq
                if u01(draw64(k, row + <uint64_t>j)) < thresh:
                    counts[j] += 1
    return counts


def olh_reports(seed_key, decision_key, user_index, true_index, d_prime, p):
    cdef uint64_t sk = <uint64_t>(int(seed_key) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t dk = <uint64_t>(int(decision_key) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] uidx = np.ascontiguousarray(
        user_index, dtype=np.int64
    )
    cdef cnp.ndarray[cnp.int64_t, ndim=1] true = np.ascontiguousarray(
        true_index, dtype=np.int64
    )
    cdef Py_ssize_t n = uidx.shape[0], i
    cdef int64_t dp = d_prime
    cdef double pp = p
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] seeds = np.empty(n, dtype=np.uint64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] buckets = np.empty(n, dtype=np.int64)
    cdef uint64_t base
    cdef int64_t tb, r
    with nogil:
        for i in range(n):
            seeds[i] = draw64(sk, <uint64_t>uidx[i])
            tb = <int64_t>(draw64(seeds[i], <uint64_t>true[i]) % <uint64_t>dp)
            base = (<uint64_t>uidx[i]) * 2
            if u01(draw64(dk, base)) < pp:
                r = tb
            else:
                r = <int64_t>(draw64(dk, base + 1) % <uint64_t>(dp - 1))
                if r >= tb:
                    r += 1
            buckets[i] = r
    return seeds, buckets


def olh_support_counts(seeds, buckets, d, d_prime):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] s = np.ascontiguousarray(
        seeds, dtype=np.uint64
    )
    cdef cnp.ndarray[cnp.int64_t, ndim=1] b = np.ascontiguousarray(
        buckets, dtype=np.int64
    )
    cdef Py_ssize_t n = s.shape[0], i
    cdef int64_t dd = d, x
    cdef uint64_t dp = <uint64_t>d_prime
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(dd, dtype=np.int64)
    with nogil:
        for i in range(n):
            for x in range(dd):
                if <int64_t>(draw64(s[i], <uint64_t>x) % dp) == b[i]:
                    counts[x] += 1
    return counts
