"""Collision probability, disruption rate and channel information measures.

Closed forms are checked here against exhaustive enumeration at small widths.
The disruption product is evaluated in log space: a direct ``log1p`` sum for
codebooks of up to 2**16 words, a 60-digit log-gamma identity above that.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import mpmath
import numpy as np

from sparrowlab.schemes import (
    DigestBackend,
    SchemeConfig,
    Variant,
    digest_many,
    permute_many,
    round_key_rows,
)
from sparrowlab.bitcore import BitString, random_bits, random_weight_mask, random_weight_masks

EXACT_BINOMIAL_MAX_N = 64
EXHAUSTIVE_MAX_BITS = 14
MUTUAL_INFO_MAX_BITS = 12
DIRECT_SUM_MAX_M = 16


class Method(enum.Enum):
    CLOSED_FORM = "closed-form"
    EXHAUSTIVE = "exhaustive"
    MONTE_CARLO = "monte-carlo"


def binomial_ci(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class CollisionStats:
    p_c: float
    log2_p_c: float
    method: Method
    trials: Optional[int] = None
    ci: Optional[tuple[float, float]] = None
    exact: Optional[Fraction] = None
    collisions: Optional[int] = None

    @classmethod
    def from_fraction(cls, value: Fraction, method: Method) -> CollisionStats:
        log2 = math.log2(value.numerator) - math.log2(value.denominator) if value else -math.inf
        return cls(float(value), log2, method, exact=value)

    @classmethod
    def from_log2(cls, log2: float, method: Method) -> CollisionStats:
        return cls(2.0**log2, log2, method)


@dataclass(frozen=True)
class DisruptionStats:
    p_d: float
    l_bits: int
    k: float
    m_bits: int
    method: Method
    trials: Optional[int] = None
    ci: Optional[tuple[float, float]] = None
    aliased: Optional[int] = None


def _check_k(n: int, k, name: str = "n") -> None:
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= {name}, got k={k}, {name}={n}")


def log2_binomial(n: int, k: int) -> float:
    """log2 C(n, k); exact integers up to n = 64, log-gamma beyond."""
    _check_k(n, k)
    if n <= EXACT_BINOMIAL_MAX_N:
        return math.log2(math.comb(n, k))
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)) / math.log(2)


# --- collision probability ------------------------------------------------------


def pc_kerrors(n: int, k: int) -> CollisionStats:
    """P_C = C(n, k) / 2^n."""
    if not 0 <= n <= 256:
        raise ValueError(f"n must be in 0..256, got {n}")
    _check_k(n, k)
    if n <= EXACT_BINOMIAL_MAX_N:
        return CollisionStats.from_fraction(Fraction(math.comb(n, k), 2**n), Method.CLOSED_FORM)
    return CollisionStats.from_log2(log2_binomial(n, k) - n, Method.CLOSED_FORM)


def pc_kerasures(n: int, k: int) -> CollisionStats:
    """P_C = 2^k / 2^n."""
    _check_k(n, k)
    return CollisionStats.from_fraction(Fraction(2**k, 2**n), Method.CLOSED_FORM)


def pc_elisha(l: int, k: int) -> CollisionStats:
    """P_C ~ 2^k / 2^l, ignoring digest collisions between distinct identities."""
    _check_k(l, k, "l")
    return CollisionStats.from_fraction(Fraction(2**k, 2**l), Method.CLOSED_FORM)


def k_for_target_pc(l: int, pc_max: float) -> int:
    """Largest erasure count whose ELISHA collision probability stays <= ``pc_max``."""
    if not 0 < pc_max <= 1:
        raise ValueError("pc_max must be in (0, 1]")
    k = math.floor(l + math.log2(pc_max) + 1e-12)
    if k < 0:
        raise ValueError(f"no k reaches P_C <= {pc_max} at l={l}")
    return min(k, l)


def _weight_masks(width: int, k: int) -> np.ndarray:
    """All ``width``-bit integers with exactly ``k`` bits set."""
    vals = [sum(1 << p for p in combo) for combo in itertools.combinations(range(width), k)]
    return np.array(vals, dtype=np.int64)


def _popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a) if hasattr(np, "bitwise_count") else np.vectorize(int.bit_count)(a)


def _agreement_fraction(width: int, k: int, include_zero: bool) -> Fraction:
    """P(two digests agree off a random weight-k mask), digest XOR uniform.

    ``include_zero`` selects whether the XOR difference may be zero (independent
    digests) or is uniform over the nonzero strings (distinct permutation images).
    """
    diffs = np.arange(0 if include_zero else 1, 2**width, dtype=np.int64)
    masks = _weight_masks(width, k)
    hits = int(((diffs[:, None] & ~masks[None, :]) == 0).sum())
    return Fraction(hits, len(diffs) * len(masks))


def pc_exact(cfg: SchemeConfig) -> CollisionStats:
    """Exact two-UE collision probability P(D(Y, X_2) = proceed | X = X_1).

    X_1 and X_2 are independent and uniform over all n-bit identities (they may
    coincide), and every weight-K mask is equally likely. For the XOR-invariant
    schemes the decision depends on (x1, x2) only through d = x1 ^ x2, and every
    d is hit by exactly 2^n ordered pairs, so enumerating d x masks counts every
    (pair, mask) combination exactly. ELISHA is averaged over an ideal digest:
    distinct identities get a uniformly random distinct digest pair under the
    permutation backend and independent uniform digests otherwise.
    """
    n, k = cfg.n_bits, cfg.k
    if n > EXHAUSTIVE_MAX_BITS:
        raise ValueError(f"exhaustive P_C limited to n_bits <= {EXHAUSTIVE_MAX_BITS}")
    v = cfg.variant
    if v is Variant.PLAIN:
        return CollisionStats.from_fraction(Fraction(1, 2**n), Method.EXHAUSTIVE)
    if v is Variant.ELISHA:
        if cfg.l_bits > EXHAUSTIVE_MAX_BITS:
            raise ValueError(f"exhaustive P_C limited to l_bits <= {EXHAUSTIVE_MAX_BITS}")
        distinct = cfg.digest_backend is not DigestBackend.RANDOM_PERMUTATION
        agree = _agreement_fraction(cfg.l_bits, k, include_zero=distinct)
        same = Fraction(1, 2**n)
        return CollisionStats.from_fraction(same + (1 - same) * agree, Method.EXHAUSTIVE)
    diffs = np.arange(2**n, dtype=np.int64)
    masks = _weight_masks(n, k)
    if v is Variant.KERRORS:
        proceed = _popcount(diffs[:, None] ^ masks[None, :]) == k
    else:
        proceed = (diffs[:, None] & ~masks[None, :]) == 0
    hits = int(proceed.sum())
    return CollisionStats.from_fraction(Fraction(hits, 2**n * len(masks)), Method.EXHAUSTIVE)


# --- disruption rate -------------------------------------------------------------


def _log_survival_direct(l: int, k: float, n: int) -> float:
    i = np.arange(n, dtype=np.float64)
    scale = 2.0**k - 1.0
    return float(np.sum(np.log1p(-i * scale / (2.0**l - i))))


def _log_survival_gamma(l: int, k: float, n: int) -> float:
    # prod_{i<n} (A - iB)/(A - i) = B^n G(A/B + 1) / G(A/B - n + 1) * G(A - n + 1) / G(A + 1)
    with mpmath.workdps(60):
        a = mpmath.mpf(2) ** l
        b = mpmath.mpf(2) ** k
        r = a / b
        out = (
            n * mpmath.log(b)
            + mpmath.loggamma(r + 1)
            - mpmath.loggamma(r - n + 1)
            + mpmath.loggamma(a - n + 1)
            - mpmath.loggamma(a + 1)
        )
        return float(out)


def log_survival(l: int, k: float, m: int) -> float:
    """ln(1 - P_D); ``-inf`` once some factor of the product reaches zero.

    ``k`` may be fractional so the rate can be inverted by bisection.
    """
    if not 0 <= k <= l:
        raise ValueError(f"need 0 <= k <= l, got k={k}, l={l}")
    if m < 0:
        raise ValueError("m must be non-negative")
    n = 2**m
    if k == 0 or n == 1:
        return 0.0
    if float(k).is_integer():
        saturated = (n - 1) << int(k) >= 1 << l
    else:
        saturated = (n - 1) * 2.0**k >= 2.0**l
    if saturated:
        return -math.inf
    if m <= DIRECT_SUM_MAX_M:
        return _log_survival_direct(l, k, n)
    return _log_survival_gamma(l, k, n)


def pd_elisha(l: int, k: int, m: int) -> DisruptionStats:
    """Probability that 2^m distinct random l-bit digests alias after erasing k bits.

    Saturates to exactly 1 when 2^m exceeds the 2^(l-k) distinguishable outputs.
    """
    if not 0 <= l <= 64:
        raise ValueError(f"l must be in 0..64, got {l}")
    if not 0 <= m <= 40:
        raise ValueError(f"m must be in 0..40, got {m}")
    ls = log_survival(l, k, m)
    p_d = 1.0 if ls == -math.inf else 0.0 - math.expm1(ls)
    return DisruptionStats(p_d, l, k, m, Method.CLOSED_FORM)


def solve_k_for_pd(l: int, m: int, pd_target: float, tol: float = 1e-9) -> float:
    """Real-valued K at which ``pd_elisha`` reaches ``pd_target`` (bisection)."""
    if not 0 < pd_target < 1:
        raise ValueError("pd_target must be in (0, 1)")
    if m < 1:
        raise ValueError("a single-codeword book is never disrupted")
    target = math.log1p(-pd_target)
    lo, hi = 0.0, float(l)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if log_survival(l, mid, m) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def pd_montecarlo(
    cfg: SchemeConfig, m: int, trials: int, rng: np.random.Generator, batch: int = 4096
) -> DisruptionStats:
    """Empirical P_D: per trial a fresh random 2^m-word book, salt and mask.

    A trial counts as disrupted when two codewords land on the same payload.
    """
    if cfg.variant is not Variant.ELISHA:
        raise ValueError("pd_montecarlo needs an ELISHA scheme")
    if trials <= 0:
        raise ValueError("trials must be positive")
    if 2**m > 2**cfg.n_bits:
        raise ValueError(f"cannot draw 2^{m} distinct {cfg.n_bits}-bit codewords")
    aliased = 0
    done = 0
    fast = cfg.digest_backend is DigestBackend.RANDOM_PERMUTATION and cfg.n_bits <= 64
    while done < trials:
        t = min(batch, trials - done)
        if fast:
            aliased += _aliased_batch_perm(cfg, m, t, rng)
        else:
            aliased += _aliased_scalar(cfg, m, t, rng)
        done += t
    p = aliased / trials
    return DisruptionStats(
        p, cfg.l_bits, cfg.k, m, Method.MONTE_CARLO, trials, binomial_ci(aliased, trials), aliased
    )


def _distinct_books(n_bits: int, size: int, t: int, rng: np.random.Generator) -> np.ndarray:
    hi = 2**n_bits
    books = rng.integers(0, hi, size=(t, size), dtype=np.uint64)
    while True:
        srt = np.sort(books, axis=1)
        dup = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
        if not dup.any():
            return books
        books[dup] = rng.integers(0, hi, size=(int(dup.sum()), size), dtype=np.uint64)


def _aliased_batch_perm(cfg: SchemeConfig, m: int, t: int, rng: np.random.Generator) -> int:
    books = _distinct_books(cfg.n_bits, 2**m, t, rng)
    keys = round_key_rows(cfg.salt_bits, t, rng)
    digests = permute_many(books, cfg.n_bits, keys)
    masks = random_weight_masks(cfg.l_bits, cfg.k, t, rng)
    full = np.uint64((1 << cfg.l_bits) - 1)
    kept = digests & (~masks & full)[:, None]
    kept.sort(axis=1)
    return int((kept[:, 1:] == kept[:, :-1]).any(axis=1).sum())


def _aliased_scalar(cfg: SchemeConfig, m: int, t: int, rng: np.random.Generator) -> int:
    hits = 0
    size = 2**m
    for _ in range(t):
        words: set[int] = set()
        while len(words) < size:
            words.add(random_bits(cfg.n_bits, rng).value)
        book = [BitString(cfg.n_bits, w) for w in words]
        salt = random_bits(cfg.salt_bits, rng)
        keep = ~random_weight_mask(cfg.l_bits, cfg.k, rng).inner.value
        kept = {d & keep for d in digest_many(book, salt, cfg)}
        hits += len(kept) < size
    return hits


# --- information measures --------------------------------------------------------


def capacity_from_pc(p_c) -> float:
    """Bits per attempt leaked by a scheme with collision probability ``p_c``."""
    if isinstance(p_c, CollisionStats):
        p_c = p_c.exact if p_c.exact is not None else p_c.p_c
    if not 0 < p_c <= 1:
        raise ValueError(f"p_c must be in (0, 1], got {p_c}")
    if isinstance(p_c, Fraction):
        return math.log2(p_c.denominator) - math.log2(p_c.numerator)
    return -math.log2(p_c)


def _entropy_bits(counts: np.ndarray, total: int) -> float:
    p = counts / total
    return float(-(p * np.log2(p)).sum())


def _pext_many(values: np.ndarray, width: int, mask: int) -> np.ndarray:
    out = np.zeros_like(values)
    for pos in range(width):
        shift = width - 1 - pos
        if not (mask >> shift) & 1:
            out = (out << 1) | ((values >> shift) & 1)
    return out


def mutual_information_bruteforce(cfg: SchemeConfig) -> float:
    """I(X;Y) in bits for uniform X, with the hint counted as part of Y.

    Builds every (x, hint) outcome explicitly; ELISHA additionally enumerates
    all salts, so it is limited to tiny salt widths.
    """
    n, k = cfg.n_bits, cfg.k
    if n > MUTUAL_INFO_MAX_BITS:
        raise ValueError(f"brute-force mutual information limited to n_bits <= {MUTUAL_INFO_MAX_BITS}")
    xs = np.arange(2**n, dtype=np.int64)
    v = cfg.variant
    if v is Variant.PLAIN:
        table = xs[:, None]
    elif v is Variant.KERRORS:
        table = xs[:, None] ^ _weight_masks(n, k)[None, :]
    elif v is Variant.KERASURES:
        masks = _weight_masks(n, k).tolist()
        span = 2 ** (n - k)
        table = np.stack([j * span + _pext_many(xs, n, mk) for j, mk in enumerate(masks)], axis=1)
    else:
        if cfg.salt_bits > 4 or cfg.l_bits > MUTUAL_INFO_MAX_BITS:
            raise ValueError("brute-force ELISHA needs salt_bits <= 4 and l_bits <= 12")
        masks = _weight_masks(cfg.l_bits, k).tolist()
        span = 2 ** (cfg.l_bits - k)
        ids = [BitString(n, int(x)) for x in xs]
        cols = []
        for s in range(2**cfg.salt_bits):
            dig = np.array(digest_many(ids, BitString(cfg.salt_bits, s), cfg), dtype=np.int64)
            for j, mk in enumerate(masks):
                cols.append((s * len(masks) + j) * span + _pext_many(dig, cfg.l_bits, mk))
        table = np.stack(cols, axis=1)
    rows, cols_n = table.shape
    total = rows * cols_n
    _, y_counts = np.unique(table, return_counts=True)
    h_y = _entropy_bits(y_counts, total)
    joint = np.arange(rows, dtype=np.int64)[:, None] * (int(table.max()) + 1) + table
    _, xy_counts = np.unique(joint, return_counts=True)
    # H(Y|X) = -sum p(x,y) log2 p(y|x), p(y|x) = count / cols
    h_y_given_x = float(-(xy_counts / total * np.log2(xy_counts / cols_n)).sum())
    return h_y - h_y_given_x


def _binary_entropy(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def fano_lower_bound(h_x_given_y: float, alphabet_log2: int, tol: float = 1e-9) -> float:
    """Smallest error probability consistent with Fano's inequality.

    Solves H_b(P_e) + P_e log2(2^a - 1) >= H(X|Y) for the least P_e.
    """
    a = alphabet_log2
    if a < 1:
        raise ValueError("alphabet must have at least two symbols")
    if not 0 <= h_x_given_y <= a + 1e-12:
        raise ValueError(f"H(X|Y) must be in [0, {a}], got {h_x_given_y}")
    log_rest = math.log2(2**a - 1)

    def bound(p: float) -> float:
        return _binary_entropy(p) + p * log_rest

    if h_x_given_y <= 0:
        return 0.0
    lo, hi = 0.0, 1.0 - 2.0**-a
    if bound(hi) <= h_x_given_y:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if bound(mid) >= h_x_given_y:
            hi = mid
        else:
            lo = mid
    return hi
