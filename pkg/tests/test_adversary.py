import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparrowlab.adversary import (
    AttackPreconditionError,
    Codebook,
    CodebookError,
    DecodeResult,
    Infeasible,
    PreimageTable,
    Structure,
    build_codebook,
    checksum,
    combine_repeats,
    estimate,
    measure_disruption,
    preimage_attack,
    repetition_recovery_exact,
    repetition_transmit,
    tag_valid,
    with_tag,
)
from sparrowlab.analytics import pd_elisha
from sparrowlab.bitcore import BitString, Mask, erase_bits, hamming_distance, random_bits, xor_bits
from sparrowlab.schemes import (
    DigestBackend,
    Hint,
    ObfuscatedBroadcast,
    SchemeConfig,
    SchemeError,
    Variant,
    obfuscate,
)

PERM = DigestBackend.RANDOM_PERMUTATION


def masks_of_weight(n, k):
    for c in itertools.combinations(range(n), k):
        yield BitString(n, sum(1 << (n - 1 - p) for p in c))


def within_3_sigma(count, trials, p):
    return abs(count - trials * p) <= 3 * math.sqrt(trials * p * (1 - p)) + 1


# --- codebooks ----------------------------------------------------------------


def test_random_codebook():
    book = build_codebook(8, 3, Structure.random(), np.random.default_rng(0))
    assert len(book) == 8
    assert len({w.value for w in book.words}) == 8
    assert all(w.width == 8 for w in book.words)


def test_min_distance_codebook():
    book = build_codebook(8, 2, Structure.min_distance(5), np.random.default_rng(1))
    assert len(book) == 4
    assert all(hamming_distance(a, b) >= 5 for a, b in itertools.combinations(book.words, 2))
    assert book.min_distance() >= 5


def test_min_distance_beyond_sphere_packing_fails():
    # Hamming bound: at most 2^8 / (1 + 8) = 28 words with d = 3
    with pytest.raises(CodebookError, match="budget"):
        build_codebook(8, 8, Structure.min_distance(3), np.random.default_rng(2), budget=20000)


def test_codebook_rejects_bad_shapes():
    with pytest.raises(CodebookError):
        Codebook((BitString(4, 1), BitString(4, 1)), 4, 1)
    with pytest.raises(CodebookError):
        Codebook((BitString(4, 1),), 4, 1)
    with pytest.raises(CodebookError):
        build_codebook(4, 5, Structure.random(), np.random.default_rng(0))


def test_codebook_save_load_roundtrip(tmp_path):
    book = build_codebook(16, 4, Structure.tagged(4), np.random.default_rng(3))
    path = tmp_path / "book.txt"
    book.save(path)
    again = Codebook.load(path)
    assert again == book
    assert again.structure == Structure.tagged(4)
    assert path.read_text().startswith("# n=16 m=4 structure=tagged:4")


def test_structure_parse():
    assert Structure.parse("random") == Structure.random()
    assert Structure.parse("min-distance:5") == Structure.min_distance(5)
    assert str(Structure.parse("tagged:8")) == "tagged:8"


def test_tagged_words_are_valid():
    book = build_codebook(40, 6, Structure.tagged(8), np.random.default_rng(4))
    assert all(tag_valid(w, 8) for w in book.words)
    assert all(book.accepts(w) for w in book.words)


def test_tag_acceptance_is_exactly_uniform_small_width():
    # exhaustively, a quarter of 12-bit words carry a valid 2-bit tag, etc.
    for n, t in [(12, 2), (12, 4), (10, 3)]:
        valid = sum(tag_valid(BitString(n, v), t) for v in range(2**n))
        assert Fraction(valid, 2**n) == Fraction(1, 2**t)


def test_tag_acceptance_rate_random_identities():
    rng = np.random.default_rng(5)
    trials = 200000
    hits = sum(tag_valid(random_bits(40, rng), 8) for _ in range(trials))
    assert hits <= trials * 2.0**-8 + 3 * math.sqrt(trials * 2.0**-8) + 1
    assert within_3_sigma(hits, trials, 2.0**-8)


@given(st.integers(0, 2**32 - 1))
def test_with_tag_checksum(payload):
    w = with_tag(payload, 40, 8)
    assert w.value & 0xFF == checksum(payload, 32, 8)
    assert tag_valid(w, 8)


# --- estimate ------------------------------------------------------------------


def test_plain_estimate_is_bijective():
    rng = np.random.default_rng(6)
    cfg = SchemeConfig.plain(16)
    book = build_codebook(16, 5, Structure.random(), rng)
    for w in book.words:
        out = estimate(obfuscate(w, cfg, rng), book, cfg)
        assert out.result is DecodeResult.DECODED and out.word == w
    outsider = next(BitString(16, v) for v in range(2**16) if BitString(16, v) not in book)
    assert estimate(obfuscate(outsider, cfg, rng), book, cfg).result is DecodeResult.NO_MATCH


def test_estimate_rejects_wrong_scheme():
    rng = np.random.default_rng(7)
    book = build_codebook(8, 2, Structure.random(), rng)
    y = obfuscate(book.words[0], SchemeConfig.kerrors(8, 2), rng)
    with pytest.raises(SchemeError):
        estimate(y, book, SchemeConfig.kerasures(8, 2))


def _kerasures_unique_oracle(book, sent, mask):
    """Unique iff no other codeword differs from ``sent`` only in erased positions."""
    return all((sent.value ^ c.value) & ~mask.value for c in book.words if c != sent)


@pytest.mark.parametrize("structure", [Structure.min_distance(3), Structure.random()])
def test_kerasures_exhaustive_decode(structure):
    n, k = 8, 2
    cfg = SchemeConfig.kerasures(n, k)
    book = build_codebook(n, 4, structure, np.random.default_rng(8))
    decoded = expected = total = 0
    for sent in book.words:
        for e in masks_of_weight(n, k):
            m = Mask(e)
            y = ObfuscatedBroadcast(erase_bits(sent, m), Hint(mask=m), Variant.KERASURES)
            out = estimate(y, book, cfg)
            ok = out.result is DecodeResult.DECODED
            assert not ok or out.word == sent
            decoded += ok
            expected += _kerasures_unique_oracle(book, sent, e)
            total += 1
    assert decoded == expected
    if structure.kind.value == "min-distance":
        assert decoded == total


@pytest.mark.parametrize("n, k, m", [(6, 1, 2), (8, 2, 2), (10, 2, 3), (10, 3, 1)])
def test_kerrors_min_distance_above_2k_decodes_exhaustively(n, k, m):
    cfg = SchemeConfig.kerrors(n, k)
    book = build_codebook(n, m, Structure.min_distance(2 * k + 1), np.random.default_rng(n + k))
    for sent in book.words:
        for e in masks_of_weight(n, k):
            y = ObfuscatedBroadcast(xor_bits(sent, e), Hint(k=k), Variant.KERRORS)
            out = estimate(y, book, cfg)
            assert out.result is DecodeResult.DECODED and out.word == sent


def test_kerrors_distance_k_plus_1_can_be_ambiguous():
    # both words sit at distance k from the payload only if their distance is
    # even and at most 2k, so odd k is needed for d = k + 1 to be ambiguous
    n, k = 8, 3
    cfg = SchemeConfig.kerrors(n, k)
    a, b = BitString(n, 0), BitString(n, 0b1111)
    book = Codebook((a, b), n, 1)
    outcomes = {
        estimate(ObfuscatedBroadcast(xor_bits(a, e), Hint(k=k), Variant.KERRORS), book, cfg).result
        for e in masks_of_weight(n, k)
    }
    assert DecodeResult.AMBIGUOUS in outcomes


def test_elisha_salted_payloads_vary():
    rng = np.random.default_rng(9)
    cfg = SchemeConfig.elisha(16, 4)
    w = BitString(16, 1234)
    assert len({obfuscate(w, cfg, rng).payload for _ in range(20)}) > 1


# --- preimage attack --------------------------------------------------------------


@pytest.mark.parametrize("backend", list(DigestBackend))
def test_preimage_unsalted_decodes_everything(backend):
    rng = np.random.default_rng(10)
    n = 16 if backend is PERM else 24
    cfg = SchemeConfig.elisha(n, 0, salt_bits=0, backend=backend)
    book = build_codebook(n, 8, Structure.random(), rng)
    table = preimage_attack(book, cfg)
    assert isinstance(table, PreimageTable)
    assert len(table) == 256 and table.collisions == 0
    report = measure_disruption(book, cfg, 10**4, rng, table=table)
    assert report.success_rate == 1.0 and report.reliable_rate == 1.0


def test_preimage_salted_is_infeasible():
    book = build_codebook(16, 8, Structure.random(), np.random.default_rng(11))
    result = preimage_attack(book, SchemeConfig.elisha(16, 0, salt_bits=64))
    assert isinstance(result, Infeasible)
    assert result.cost_log2_per_codeword == 64
    assert result.cost_log2_total == 72


def test_preimage_rejects_erasures():
    book = build_codebook(16, 4, Structure.random(), np.random.default_rng(12))
    with pytest.raises(AttackPreconditionError):
        preimage_attack(book, SchemeConfig.elisha(16, 8, salt_bits=0))
    with pytest.raises(AttackPreconditionError):
        preimage_attack(book, SchemeConfig.kerrors(16, 2))


# --- repetition -----------------------------------------------------------------


def _repetition_enumerated(n, k, repeats):
    masks = [e.value for e in masks_of_weight(n, k)]
    full = (1 << n) - 1
    good = 0
    for combo in itertools.product(masks, repeat=repeats):
        erased_everywhere = full
        for m in combo:
            erased_everywhere &= m
        good += erased_everywhere == 0
    return Fraction(good, len(masks) ** repeats)


@pytest.mark.parametrize("n, k, r", [(8, 4, 2), (6, 3, 2), (6, 2, 3), (5, 4, 3), (4, 0, 1)])
def test_repetition_exact_matches_enumeration(n, k, r):
    assert repetition_recovery_exact(n, k, r) == _repetition_enumerated(n, k, r)


def test_repetition_examples():
    assert repetition_recovery_exact(8, 4, 2) == Fraction(1, 70)
    assert repetition_recovery_exact(8, 0, 1) == 1
    assert repetition_recovery_exact(8, 4, 32) >= Fraction(999, 1000)
    # the independent-position shortcut is only an approximation
    assert float(repetition_recovery_exact(8, 4, 2)) != pytest.approx(0.75**8, rel=0.1)


def test_repetition_monte_carlo():
    rng = np.random.default_rng(13)
    cfg = SchemeConfig.kerasures(8, 4)
    trials = 20000
    for repeats in (2, 8):
        hits = 0
        for _ in range(trials):
            w = random_bits(8, rng)
            rec = combine_repeats(repetition_transmit(w, repeats, cfg, rng), 8)
            assert rec.value.value & rec.known.value == w.value & rec.known.value
            hits += rec.complete
        assert within_3_sigma(hits, trials, float(repetition_recovery_exact(8, 4, repeats)))


def test_repetition_preconditions():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        repetition_transmit(BitString(8, 1), 0, SchemeConfig.kerasures(8, 2), rng)
    with pytest.raises(AttackPreconditionError):
        repetition_transmit(BitString(8, 1), 2, SchemeConfig.kerrors(8, 2), rng)


# --- disruption -----------------------------------------------------------------


def test_measure_disruption_plain():
    rng = np.random.default_rng(14)
    book = build_codebook(40, 6, Structure.random(), rng)
    r = measure_disruption(book, SchemeConfig.plain(40), 2000, rng)
    assert r.success_rate == 1.0 and r.aliased == 0


def test_measure_disruption_elisha_aliasing_rate():
    rng = np.random.default_rng(15)
    cfg = SchemeConfig.elisha(16, 4, backend=PERM)
    book = build_codebook(16, 4, Structure.random(), rng)
    trials = 20000
    r = measure_disruption(book, cfg, trials, rng)
    p = pd_elisha(16, 4, 4).p_d
    assert within_3_sigma(r.aliased, trials, p)
    assert within_3_sigma(trials - r.reliable, trials, p)
    assert r.wrong == 0
    # a per-word ambiguity needs the sent word itself to alias: a sub-event
    assert r.ambiguous <= r.aliased


def test_measure_disruption_full_erasure_is_guessing():
    rng = np.random.default_rng(16)
    cfg = SchemeConfig.elisha(16, 16, backend=PERM)
    book = build_codebook(16, 2, Structure.random(), rng)
    r = measure_disruption(book, cfg, 2000, rng)
    assert r.success_rate <= 2.0**-2 * 1.01
    assert r.aliasing_rate == 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_decoded_word_is_always_consistent(seed):
    rng = np.random.default_rng(seed)
    cfg = SchemeConfig.kerasures(12, 3)
    book = build_codebook(12, 3, Structure.random(), rng)
    w = book.words[int(rng.integers(len(book)))]
    out = estimate(obfuscate(w, cfg, rng), book, cfg)
    assert out.result is not DecodeResult.NO_MATCH
    if out.result is DecodeResult.DECODED:
        assert out.word == w


# --- full-space codebook ------------------------------------------------------------


def test_full_codebook_is_implicit(tmp_path):
    book = build_codebook(40, 40, Structure.full(), np.random.default_rng(0))
    assert len(book) == 2**40
    assert book.words[5] == BitString(40, 5)
    assert BitString(40, 2**39) in book and book.index_of(BitString(40, 7)) == 7
    path = tmp_path / "full.txt"
    book.save(path)
    assert path.read_text() == "# n=40 m=40 structure=full\n"
    assert Codebook.load(path) == book
    with pytest.raises(CodebookError):
        build_codebook(40, 8, Structure.full(), np.random.default_rng(0))


@pytest.mark.parametrize("k", [0, 1, 3])
def test_full_codebook_decoding_matches_enumeration(k):
    n = 8
    rng = np.random.default_rng(k)
    full = build_codebook(n, n, Structure.full(), rng)
    explicit = Codebook(tuple(BitString(n, v) for v in range(2**n)), n, n)
    for cfg in (SchemeConfig.kerrors(n, k), SchemeConfig.kerasures(n, k)):
        for _ in range(30):
            y = obfuscate(random_bits(n, rng), cfg, rng)
            a, b = estimate(y, full, cfg), estimate(y, explicit, cfg)
            assert (a.result, a.word, a.consistent) == (b.result, b.word, b.consistent)
    with pytest.raises(CodebookError):
        estimate(obfuscate(BitString(n, 1), SchemeConfig.elisha(n, 0), rng), full, SchemeConfig.elisha(n, 0))
