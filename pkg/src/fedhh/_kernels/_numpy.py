"""Pure numpy implementation of the report-simulation kernels.

Bit-for-bit equivalent to the compiled kernel in ``_fastkern.pyx``: both sides
evaluate the same splitmix64 draws at the same (key, counter) addresses. All
arithmetic is uint64 with wraparound.
"""

from __future__ import annotations

import numpy as np

backend_name = "numpy"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MULT_A = np.uint64(0xBF58476D1CE4E5B9)
_MULT_B = np.uint64(0x94D049BB133111EB)
_U53 = 1.0 / 9007199254740992.0

# Soft cap on the number of draws materialized at once by the O(n*d) kernels.
_CHUNK_ELEMS = 1 << 22


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MULT_A
    z = (z ^ (z >> np.uint64(27))) * _MULT_B
    return z ^ (z >> np.uint64(31))


def _draw64(key: int, counters: np.ndarray) -> np.ndarray:
    return _mix64(np.uint64(key) + (counters + np.uint64(1)) * _GOLDEN)


def _uniform01(u: np.ndarray) -> np.ndarray:
    return (u >> np.uint64(11)).astype(np.float64) * _U53


def uniform_block(key: int, counters: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1) at explicit counter addresses (tests, benchmarks)."""
    return _uniform01(_draw64(key, counters.astype(np.uint64)))


def krr_counts(key: int, user_index, true_index, d: int, p: float) -> np.ndarray:
    """Perturb each user's index with k-ary randomized response; bin the reports.

    Draw addresses: decision at 2*user_index, alternative at 2*user_index + 1.
    """
    uidx = np.asarray(user_index, dtype=np.int64)
    true = np.asarray(true_index, dtype=np.int64)
    base = uidx.astype(np.uint64) * np.uint64(2)
    keep = _uniform01(_draw64(key, base)) < p
    alt = (_draw64(key, base + np.uint64(1)) % np.uint64(d - 1)).astype(np.int64)
    alt += alt >= true
    reported = np.where(keep, true, alt)
    return np.bincount(reported, minlength=d).astype(np.int64)


def oue_counts(key: int, user_index, true_index, d: int, q: float) -> np.ndarray:
    """Column sums of unary-encoded reports (true bit kept w.p. 1/2, others q).

    Draw addresses: user_index * d + bit.
    """
    uidx = np.asarray(user_index, dtype=np.int64)
    true = np.asarray(true_index, dtype=np.int64)
    counts = np.zeros(d, dtype=np.int64)
    step = max(1, _CHUNK_ELEMS // d)
    bits = np.arange(d, dtype=np.uint64)
    for lo in range(0, len(uidx), step):
        u = uidx[lo : lo + step]
        t = true[lo : lo + step]
        ctr = u.astype(np.uint64)[:, None] * np.uint64(d) + bits[None, :]
        uni = _uniform01(_draw64(key, ctr))
        thresh = np.full((len(u), d), q)
        thresh[np.arange(len(u)), t] = 0.5
        counts += (uni < thresh).sum(axis=0, dtype=np.int64)
    return counts


def olh_reports(
    seed_key: int, decision_key: int, user_index, true_index, d_prime: int, p: float
):
    """Per-user hash seeds and perturbed buckets for the local-hashing oracle.

    Seeds are drawn from stream ``seed_key`` at counter user_index; bucket
    perturbation draws from ``decision_key`` at 2*user_index (+1).
    """
    uidx = np.asarray(user_index, dtype=np.int64)
    true = np.asarray(true_index, dtype=np.int64)
    seeds = _draw64(seed_key, uidx.astype(np.uint64))
    true_bucket = (_draw64_rows(seeds, true) % np.uint64(d_prime)).astype(np.int64)
    base = uidx.astype(np.uint64) * np.uint64(2)
    keep = _uniform01(_draw64(decision_key, base)) < p
    alt = (_draw64(decision_key, base + np.uint64(1)) % np.uint64(d_prime - 1)).astype(
        np.int64
    )
    alt += alt >= true_bucket
    return seeds, np.where(keep, true_bucket, alt)


def _draw64_rows(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """draw64 with a distinct key per row."""
    return _mix64(keys + (counters.astype(np.uint64) + np.uint64(1)) * _GOLDEN)


def olh_support_counts(seeds, buckets, d: int, d_prime: int) -> np.ndarray:
    """For each candidate index, count reports whose hash lands on their bucket."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    buckets = np.asarray(buckets, dtype=np.int64)
    counts = np.zeros(d, dtype=np.int64)
    step = max(1, _CHUNK_ELEMS // d)
    cand = np.arange(d, dtype=np.uint64)
    dp = np.uint64(d_prime)
    for lo in range(0, len(seeds), step):
        s = seeds[lo : lo + step]
        b = buckets[lo : lo + step]
        h = _mix64(s[:, None] + (cand[None, :] + np.uint64(1)) * _GOLDEN) % dp
        counts += (h.astype(np.int64) == b[:, None]).sum(axis=0, dtype=np.int64)
    return counts
