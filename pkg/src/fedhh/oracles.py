"""The three locally differentially private frequency oracles.

k-ary randomized response (krr), optimized unary encoding (oue) and optimized
local hashing (olh): perturbation, aggregation into support counts, unbiased
frequency estimation and the analytic variance formulas. Estimates are never
clipped; negative values are kept because rank order near zero matters to the
trie protocols. The dummy slot is an ordinary domain index whose estimate the
caller discards after aggregation.

Two perturbation paths exist. ``perturb``/``aggregate`` work on explicit
per-user reports and accept any ``numpy.random.Generator``. The protocol
engines instead use ``perturb_counts``, which simulates a whole user group
through the counter-addressed kernels (see ``fedhh._kernels``), so repeated
runs are bit-identical regardless of thread count or iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fedhh import _kernels
from fedhh._rng import derive_key, olh_bucket

KINDS = ("krr", "oue", "olh")

# Sub-stream tags so one level key can feed several independent draw streams.
_STREAM_DECISION = 1
_STREAM_OLH_SEED = 2


@dataclass(frozen=True)
class OracleConfig:
    """Oracle kind, privacy budget and alphabet size (dummy slot included)."""

    kind: str
    epsilon: float
    domain_size: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.domain_size < 2:
            raise ValueError("domain size must be at least 2")

    @property
    def d_prime(self) -> int:
        """Hash range of the local-hashing oracle: ceil(e^eps + 1)."""
        return max(2, math.ceil(math.exp(self.epsilon) + 1))

    @property
    def p(self) -> float:
        """Probability that the report supports the user's true index."""
        e = math.exp(self.epsilon)
        if self.kind == "krr":
            return e / (self.domain_size - 1 + e)
        if self.kind == "oue":
            return 0.5
        return e / (self.d_prime - 1 + e)

    @property
    def q(self) -> float:
        """Probability that the report supports any fixed other index."""
        e = math.exp(self.epsilon)
        if self.kind == "krr":
            return 1.0 / (self.domain_size - 1 + e)
        if self.kind == "oue":
            return 1.0 / (e + 1)
        # For a non-true item x, the report supports x iff the perturbed
        # bucket equals hash(seed, x); by pairwise uniformity of the hash
        # family this happens with probability p/d' + (1-p)/d' = 1/d'.
        return 1.0 / self.d_prime


@dataclass
class OracleReport:
    """One user's sanitized report, tagged by the oracle kind."""

    kind: str
    index: int | None = None  # krr: reported index
    bits: np.ndarray | None = None  # oue: reported bit vector
    hash_seed: int | None = None  # olh
    bucket: int | None = None  # olh


@dataclass
class FrequencyTable:
    """Support counts and unbiased frequency estimates per domain index."""

    estimates: np.ndarray
    support_counts: np.ndarray
    n: int


def perturb(config: OracleConfig, true_index: int, rng: np.random.Generator) -> OracleReport:
    """Sanitize one user's index under the configured oracle."""
    d = config.domain_size
    if not 0 <= true_index < d:
        raise ValueError(f"index {true_index} out of range [0, {d})")
    if config.kind == "krr":
        if rng.random() < config.p:
            return OracleReport("krr", index=true_index)
        other = int(rng.integers(0, d - 1))
        if other >= true_index:
            other += 1
        return OracleReport("krr", index=other)
    if config.kind == "oue":
        thresholds = np.full(d, config.q)
        thresholds[true_index] = 0.5
        return OracleReport("oue", bits=(rng.random(d) < thresholds).astype(np.uint8))
    dp = config.d_prime
    seed = int(rng.integers(0, 1 << 64, dtype=np.uint64))
    bucket = olh_bucket(seed, true_index, dp)
    if rng.random() >= config.p:
        other = int(rng.integers(0, dp - 1))
        if other >= bucket:
            other += 1
        bucket = other
    return OracleReport("olh", hash_seed=seed, bucket=bucket)


def aggregate(config: OracleConfig, reports: list[OracleReport]) -> FrequencyTable:
    """Fold reports into support counts and unbiased frequency estimates."""
    if not reports:
        raise ValueError("cannot aggregate an empty report list")
    d = config.domain_size
    kinds = {r.kind for r in reports}
    if kinds != {config.kind}:
        raise ValueError(f"report kinds {kinds} do not match oracle {config.kind!r}")
    if config.kind == "krr":
        indices = np.array([r.index for r in reports], dtype=np.int64)
        counts = np.bincount(indices, minlength=d).astype(np.int64)
    elif config.kind == "oue":
        for r in reports:
            if len(r.bits) != d:
                raise ValueError("report vector length does not match domain size")
        counts = np.sum([r.bits for r in reports], axis=0, dtype=np.int64)
    else:
        seeds = np.array([r.hash_seed for r in reports], dtype=np.uint64)
        buckets = np.array([r.bucket for r in reports], dtype=np.int64)
        counts = _kernels.olh_support_counts(seeds, buckets, d, config.d_prime)
    return FrequencyTable(
        estimates=estimate_from_counts(config, counts, len(reports)),
        support_counts=counts,
        n=len(reports),
    )


def estimate_from_counts(config: OracleConfig, counts: np.ndarray, n: int) -> np.ndarray:
    """Unbiased estimator f_x = (c_x / n - q) / (p - q)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return (np.asarray(counts, dtype=np.float64) / n - config.q) / (config.p - config.q)


def perturb_counts(
    config: OracleConfig, stream_key: int, user_index, true_index
) -> np.ndarray:
    """Simulate one report per user and return the support counts.

    Every draw is addressed by the user's party-stable index within the
    derived sub-streams of ``stream_key``, so the result does not depend on
    the order of users in the arrays.
    """
    d = config.domain_size
    decision_key = derive_key(stream_key, _STREAM_DECISION)
    if config.kind == "krr":
        return _kernels.krr_counts(decision_key, user_index, true_index, d, config.p)
    if config.kind == "oue":
        return _kernels.oue_counts(decision_key, user_index, true_index, d, config.q)
    seed_key = derive_key(stream_key, _STREAM_OLH_SEED)
    seeds, buckets = _kernels.olh_reports(
        seed_key, decision_key, user_index, true_index, config.d_prime, config.p
    )
    return _kernels.olh_support_counts(seeds, buckets, d, config.d_prime)


def variance(config: OracleConfig, n: int) -> float:
    """Estimator variance at ``n`` reports (the oue/olh forms coincide)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    e = math.exp(config.epsilon)
    if config.kind == "krr":
        return (config.domain_size - 2 + e) / ((e - 1) ** 2 * n)
    return 4 * e / ((e - 1) ** 2 * n)


def ratio_bound_check(config: OracleConfig) -> float:
    """Maximum likelihood ratio sup_{x,x',y} Pr[y|x] / Pr[y|x'].

    Computed analytically from the probability tables; an oracle satisfies
    its budget iff the returned ratio is <= e^eps.
    """
    if config.kind == "krr":
        return config.p / config.q
    if config.kind == "olh":
        # Conditioned on the (input-independent) seed, the bucket follows a
        # two-point distribution: p on the true hash, (1-p)/(d'-1) elsewhere.
        p = config.p
        return p * (config.d_prime - 1) / (1 - p)
    # oue: any two inputs govern exactly two bit positions; the joint ratio
    # is the product of the per-bit ratios. Enumerate the four possibilities.
    p, q = config.p, config.q
    best = 0.0
    for bit_x in (0, 1):
        for bit_other in (0, 1):
            pr_x = p if bit_x else 1 - p  # position of x when x is the input
            pr_x_alt = q if bit_x else 1 - q  # same position when it is not
            pr_o = q if bit_other else 1 - q
            pr_o_alt = p if bit_other else 1 - p
            best = max(best, (pr_x * pr_o) / (pr_x_alt * pr_o_alt))
    return best
