import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparrowlab.analytics import (
    DIRECT_SUM_MAX_M,
    Method,
    _log_survival_direct,
    _log_survival_gamma,
    binomial_ci,
    capacity_from_pc,
    fano_lower_bound,
    k_for_target_pc,
    log_survival,
    mutual_information_bruteforce,
    pc_elisha,
    pc_exact,
    pc_kerasures,
    pc_kerrors,
    pd_elisha,
    pd_montecarlo,
    solve_k_for_pd,
)
from sparrowlab.bitcore import BitString, Mask
from sparrowlab.schemes import (
    Decision,
    DigestBackend,
    Hint,
    ObfuscatedBroadcast,
    SchemeConfig,
    Variant,
    decide,
)
from sparrowlab.bitcore import erase_bits, xor_bits

PERM = DigestBackend.RANDOM_PERMUTATION


def pd_reference(l, k, m, dps=50):
    """Disruption product evaluated with 50-digit arithmetic."""
    with mpmath.workdps(dps):
        big = mpmath.mpf(2) ** l
        step = mpmath.mpf(2) ** k
        prod = mpmath.mpf(1)
        for i in range(2**m):
            num = big - i * step
            if num <= 0:
                return 1.0
            prod *= num / (big - i)
        return float(1 - prod)


def naive_pc(cfg):
    """Average of decide() over every (x1, x2) pair and every mask."""
    n, k = cfg.n_bits, cfg.k
    masks = [
        BitString(n, sum(1 << (n - 1 - p) for p in c)) for c in itertools.combinations(range(n), k)
    ]
    hits = 0
    total = 0
    for x1 in range(2**n):
        a = BitString(n, x1)
        for e in masks:
            if cfg.variant is Variant.KERRORS:
                y = ObfuscatedBroadcast(xor_bits(a, e), Hint(k=k), Variant.KERRORS)
            else:
                y = ObfuscatedBroadcast(erase_bits(a, Mask(e)), Hint(mask=Mask(e)), Variant.KERASURES)
            for x2 in range(2**n):
                hits += decide(y, BitString(n, x2), cfg) is Decision.PROCEED
                total += 1
    return Fraction(hits, total)


# --- closed forms ---------------------------------------------------------------


def test_pc_kerrors_examples():
    assert pc_kerrors(40, 0).p_c == 2.0**-40
    assert pc_kerrors(40, 40).p_c == 2.0**-40
    v = pc_kerrors(40, 20)
    assert v.p_c == pytest.approx(0.12537068761957926, rel=1e-15)
    assert v.exact == Fraction(math.comb(40, 20), 2**40)


def test_pc_kerrors_large_n_log_gamma_path():
    with mpmath.workdps(40):
        ref = mpmath.log(mpmath.binomial(200, 70), 2) - 200
    assert pc_kerrors(200, 70).log2_p_c == pytest.approx(float(ref), abs=1e-9)
    with pytest.raises(ValueError):
        pc_kerrors(257, 1)


def test_pc_kerasures_examples():
    assert pc_kerasures(40, 0).p_c == 2.0**-40
    assert pc_kerasures(40, 40).p_c == 1.0
    assert pc_kerasures(40, 10).exact == Fraction(1, 2**30)
    with pytest.raises(ValueError):
        pc_kerasures(4, 5)


def test_pc_elisha_examples():
    assert pc_elisha(40, 0).p_c == 2.0**-40
    assert pc_elisha(40, 6).p_c == pytest.approx(5.820766091346741e-11, rel=1e-15)
    assert pc_elisha(40, 34).p_c == pytest.approx(2.0**-6)
    assert k_for_target_pc(40, 1e-10) == 6
    assert k_for_target_pc(40, 1.0) == 40


# --- exhaustive collision probability ---------------------------------------------


def test_pc_exact_examples():
    assert pc_exact(SchemeConfig.plain(8)).exact == Fraction(1, 256)
    assert pc_exact(SchemeConfig.kerasures(8, 3)).exact == Fraction(1, 32)
    assert pc_exact(SchemeConfig.kerrors(8, 2)).exact == Fraction(28, 256)
    assert pc_exact(SchemeConfig.plain(8)).method is Method.EXHAUSTIVE


@pytest.mark.parametrize("n", range(1, 6))
def test_pc_exact_matches_decide_enumeration(n):
    for k in range(n + 1):
        for cfg in (SchemeConfig.kerrors(n, k), SchemeConfig.kerasures(n, k)):
            assert pc_exact(cfg).exact == naive_pc(cfg)


@pytest.mark.parametrize("n", [6, 9, 12])
def test_pc_exact_equals_closed_forms(n):
    for k in range(n + 1):
        assert pc_exact(SchemeConfig.kerrors(n, k)).exact == pc_kerrors(n, k).exact
        assert pc_exact(SchemeConfig.kerasures(n, k)).exact == pc_kerasures(n, k).exact


@pytest.mark.parametrize("n, k", [(8, 0), (8, 3), (10, 5)])
def test_pc_exact_elisha_permutation(n, k):
    # identical identities always collide; distinct ones leave a uniform nonzero
    # digest difference, which must be covered by the erased positions
    cfg = SchemeConfig.elisha(n, k, backend=PERM)
    expected = Fraction(1, 2**n) + Fraction(2**n - 1, 2**n) * Fraction(2**k - 1, 2**n - 1)
    assert pc_exact(cfg).exact == expected == pc_elisha(n, k).exact


def test_pc_exact_elisha_wide_digest():
    cfg = SchemeConfig.elisha(8, 3, l_bits=10, backend=DigestBackend.RANDOM_ORACLE)
    expected = Fraction(1, 256) + Fraction(255, 256) * Fraction(8, 1024)
    assert pc_exact(cfg).exact == expected == Fraction(383, 32768)


def test_pc_exact_width_cap():
    with pytest.raises(ValueError):
        pc_exact(SchemeConfig.kerrors(15, 2))


# --- mutual information ---------------------------------------------------------


def test_mutual_information_examples():
    assert mutual_information_bruteforce(SchemeConfig.kerasures(10, 4)) == pytest.approx(6.0, abs=1e-12)
    assert mutual_information_bruteforce(SchemeConfig.kerrors(10, 0)) == pytest.approx(10.0, abs=1e-12)
    assert mutual_information_bruteforce(SchemeConfig.plain(8)) == pytest.approx(8.0, abs=1e-12)


@pytest.mark.parametrize("n", [3, 7, 11])
def test_mutual_information_equals_capacity(n):
    for k in range(n + 1):
        for cfg in (SchemeConfig.kerrors(n, k), SchemeConfig.kerasures(n, k)):
            mi = mutual_information_bruteforce(cfg)
            assert mi == pytest.approx(capacity_from_pc(pc_exact(cfg)), abs=1e-9)


def test_mutual_information_elisha_tiny_salt():
    # bijective digest, no erasure: every salt still reveals x exactly
    cfg = SchemeConfig.elisha(6, 0, salt_bits=2, backend=PERM)
    assert mutual_information_bruteforce(cfg) == pytest.approx(6.0, abs=1e-12)
    cfg = SchemeConfig.elisha(6, 2, salt_bits=2, backend=PERM)
    assert mutual_information_bruteforce(cfg) < 6.0
    with pytest.raises(ValueError):
        mutual_information_bruteforce(SchemeConfig.elisha(6, 0, salt_bits=8))


def test_capacity_examples():
    assert capacity_from_pc(1.0) == 0.0
    assert capacity_from_pc(2.0**-40) == 40.0
    assert capacity_from_pc(pc_kerrors(12, 3)) == pytest.approx(12 - math.log2(220), abs=1e-12)
    with pytest.raises(ValueError):
        capacity_from_pc(0.0)


@given(st.integers(0, 60), st.data())
def test_capacity_of_kerasures_is_n_minus_k(n, data):
    k = data.draw(st.integers(0, n))
    assert capacity_from_pc(pc_kerasures(n, k)) == n - k


def test_fano_examples():
    assert fano_lower_bound(0, 8) == 0.0
    assert fano_lower_bound(1, 1) == pytest.approx(0.5, abs=1e-9)
    pe = fano_lower_bound(8, 8)
    assert pe == pytest.approx(1 - 1 / 256, abs=1e-8)
    # plug back in: the bound holds at pe and fails just below it
    hb = lambda p: -p * math.log2(p) - (1 - p) * math.log2(1 - p)
    assert hb(pe) + pe * math.log2(255) >= 8 - 1e-8
    assert hb(pe - 1e-6) + (pe - 1e-6) * math.log2(255) < 8
    with pytest.raises(ValueError):
        fano_lower_bound(9, 8)


def test_binomial_ci_brackets():
    lo, hi = binomial_ci(50, 100)
    assert lo < 0.5 < hi
    assert binomial_ci(0, 100)[0] == 0.0


# --- disruption ---------------------------------------------------------------


def test_pd_frozen_values():
    assert pd_elisha(40, 6, 16).p_d == pytest.approx(0.11577626666351062, rel=1e-9)
    assert pd_elisha(16, 4, 4).p_d == pytest.approx(0.0271279450103483, rel=1e-12)
    assert pd_elisha(40, 20, 8).p_d == pytest.approx(0.03065086598054232, rel=1e-9)


@pytest.mark.parametrize("l, k, m", [(16, 4, 4), (20, 8, 6), (24, 10, 8), (32, 16, 10), (40, 6, 12)])
def test_pd_matches_high_precision_product(l, k, m):
    assert pd_elisha(l, k, m).p_d == pytest.approx(pd_reference(l, k, m), rel=1e-9, abs=1e-15)


def test_pd_edges():
    for k in (0, 6, 40):
        assert pd_elisha(40, k, 0).p_d == 0.0
    for m in (0, 1, 16, 40):
        assert pd_elisha(40, 0, m).p_d == 0.0
    for l in (1, 16, 40, 64):
        assert pd_elisha(l, l, 1).p_d == 1.0
    # 2^m codewords cannot fit in 2^(l-k) outputs
    assert pd_elisha(40, 34, 8).p_d == 1.0
    assert pd_elisha(10, 4, 7).p_d == 1.0


def test_pd_range_errors():
    with pytest.raises(ValueError):
        pd_elisha(65, 0, 1)
    with pytest.raises(ValueError):
        pd_elisha(40, 0, 41)
    with pytest.raises(ValueError):
        pd_elisha(40, 41, 1)


def test_pd_monotone_at_l40():
    for m in range(0, 41, 4):
        seq = [pd_elisha(40, k, m).p_d for k in range(41)]
        assert all(a <= b for a, b in zip(seq, seq[1:]))
    for k in range(0, 41, 4):
        seq = [pd_elisha(40, k, m).p_d for m in range(41)]
        assert all(a <= b for a, b in zip(seq, seq[1:]))


@pytest.mark.parametrize("l, k", [(40, 6), (40, 12), (64, 20), (30, 3)])
def test_direct_and_gamma_paths_agree(l, k):
    for m in (DIRECT_SUM_MAX_M - 2, DIRECT_SUM_MAX_M):
        n = 2**m
        a = _log_survival_direct(l, k, n)
        b = _log_survival_gamma(l, k, n)
        assert b == pytest.approx(a, rel=1e-9, abs=1e-15)
    # continuity across the switch
    lo = log_survival(l, k, DIRECT_SUM_MAX_M)
    hi = log_survival(l, k, DIRECT_SUM_MAX_M + 1)
    assert hi <= lo


def test_solve_k_for_pd():
    k = solve_k_for_pd(40, 16, 0.1)
    assert log_survival(40, k, 16) == pytest.approx(math.log(0.9), rel=1e-6)
    assert 5 < k < 7
    k8 = solve_k_for_pd(40, 8, 0.5)
    assert k8 == pytest.approx(24.474, abs=1e-3)
    pc = 2.0 ** (k8 - 40)
    assert abs(math.log10(pc) - (-5)) <= 0.5


def test_pd_montecarlo_edges():
    rng = np.random.default_rng(0)
    r = pd_montecarlo(SchemeConfig.elisha(16, 0, backend=PERM), 4, 10**5, rng)
    assert r.aliased == 0
    r = pd_montecarlo(SchemeConfig.elisha(16, 16, backend=PERM), 1, 500, rng)
    assert r.p_d == 1.0
    with pytest.raises(ValueError):
        pd_montecarlo(SchemeConfig.kerrors(16, 2), 4, 10, rng)
    with pytest.raises(ValueError):
        pd_montecarlo(SchemeConfig.elisha(16, 4, backend=PERM), 4, 0, rng)


def _within_3_sigma(count, trials, p):
    sigma = math.sqrt(trials * p * (1 - p))
    return abs(count - trials * p) <= 3 * sigma + 1


@pytest.mark.parametrize(
    "cfg, m, trials",
    [
        (SchemeConfig.elisha(16, 4, backend=PERM), 4, 10**5),
        (SchemeConfig.elisha(20, 10, backend=PERM), 5, 20000),
        (SchemeConfig.elisha(12, 4, backend=PERM), 3, 20000),
        (SchemeConfig.elisha(12, 4, l_bits=16), 3, 3000),
        (SchemeConfig.elisha(12, 6, l_bits=16, backend=DigestBackend.RANDOM_ORACLE), 3, 2000),
    ],
)
def test_pd_montecarlo_agrees_with_closed_form(cfg, m, trials):
    r = pd_montecarlo(cfg, m, trials, np.random.default_rng(cfg.k * 31 + m))
    p = pd_elisha(cfg.l_bits, cfg.k, m).p_d
    assert _within_3_sigma(r.aliased, trials, p)
    assert r.ci[0] <= r.p_d <= r.ci[1]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.data())
def test_pd_is_a_probability(l, data):
    k = data.draw(st.integers(0, l))
    m = data.draw(st.integers(0, 40))
    p = pd_elisha(l, k, m).p_d
    assert 0.0 <= p <= 1.0
