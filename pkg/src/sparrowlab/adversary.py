"""The covert pair: codebooks, the receiver's estimator and its counter-moves.

The transmitter picks Msg3 identities from a shared codebook; the receiver
listens to Msg4 and maps each broadcast back to a codeword. Decoding is
strictly unique: two or more consistent codewords is an ambiguous (disrupted)
attempt, never a guess.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from collections.abc import Sequence
from typing import Optional, Union

import numpy as np

from sparrowlab.bitcore import BitString, Mask, random_bits, restore_bits
from sparrowlab.schemes import (
    ObfuscatedBroadcast,
    SchemeConfig,
    SchemeError,
    Variant,
    digest,
    digest_many,
    obfuscate,
)

GREEDY_BUDGET = 10**6


class CodebookError(RuntimeError):
    """The requested codebook structure could not be built."""


class AttackPreconditionError(ValueError):
    """The attack does not apply to the given scheme configuration."""


class StructureKind(enum.Enum):
    RANDOM = "random"
    MIN_DISTANCE = "min-distance"
    TAGGED = "tagged"
    FULL = "full"


@dataclass(frozen=True)
class Structure:
    kind: StructureKind = StructureKind.RANDOM
    param: int = 0

    @classmethod
    def random(cls) -> Structure:
        return cls(StructureKind.RANDOM)

    @classmethod
    def min_distance(cls, d: int) -> Structure:
        return cls(StructureKind.MIN_DISTANCE, d)

    @classmethod
    def tagged(cls, tag_bits: int) -> Structure:
        return cls(StructureKind.TAGGED, tag_bits)

    @classmethod
    def full(cls) -> Structure:
        """Every n-bit word is a codeword (m == n); kept implicit."""
        return cls(StructureKind.FULL)

    @classmethod
    def parse(cls, text: str) -> Structure:
        name, _, arg = text.strip().partition(":")
        kind = StructureKind(name)
        if kind in (StructureKind.RANDOM, StructureKind.FULL):
            return cls(kind)
        return cls(kind, int(arg))

    def __str__(self) -> str:
        if self.kind in (StructureKind.RANDOM, StructureKind.FULL):
            return self.kind.value
        return f"{self.kind.value}:{self.param}"


def checksum(payload: int, payload_bits: int, tag_bits: int) -> int:
    """Sum of the payload's ``tag_bits``-wide chunks, mod 2^tag_bits.

    Uniform over tags whenever the payload is uniform and at least one chunk
    is full width, so a random identity passes with probability 2^-tag_bits.
    """
    mod = 1 << tag_bits
    total = 0
    while payload_bits > 0:
        total += payload & (mod - 1)
        payload >>= tag_bits
        payload_bits -= tag_bits
    return total % mod


def with_tag(payload: int, n_bits: int, tag_bits: int) -> BitString:
    body = n_bits - tag_bits
    return BitString(n_bits, (payload << tag_bits) | checksum(payload, body, tag_bits))


def tag_valid(word: BitString, tag_bits: int) -> bool:
    body = word.width - tag_bits
    return word.value & ((1 << tag_bits) - 1) == checksum(word.value >> tag_bits, body, tag_bits)


class _AllWords(Sequence):
    """Lazy view of every n-bit word; symbol i is the word with value i."""

    def __init__(self, n_bits: int):
        self.n_bits = n_bits

    def __len__(self) -> int:
        return 2**self.n_bits

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        i = int(i)
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return BitString(self.n_bits, i)

    def __eq__(self, other) -> bool:
        return isinstance(other, _AllWords) and other.n_bits == self.n_bits

    def __hash__(self) -> int:
        return hash(("all", self.n_bits))


@dataclass(frozen=True)
class Codebook:
    words: tuple[BitString, ...]
    n_bits: int
    m_bits: int
    structure: Structure = field(default_factory=Structure.random)

    def __post_init__(self):
        if self.structure.kind is StructureKind.FULL:
            if self.m_bits != self.n_bits:
                raise CodebookError("a full codebook needs m_bits == n_bits")
            object.__setattr__(self, "words", _AllWords(self.n_bits))
            object.__setattr__(self, "_index", None)
            object.__setattr__(self, "_values", None)
            return
        if len(self.words) != 2**self.m_bits:
            raise CodebookError(f"expected 2^{self.m_bits} words, got {len(self.words)}")
        if any(w.width != self.n_bits for w in self.words):
            raise CodebookError(f"all words must be {self.n_bits} bits wide")
        index = {w.value: i for i, w in enumerate(self.words)}
        if len(index) != len(self.words):
            raise CodebookError("codewords must be distinct")
        object.__setattr__(self, "_index", index)
        if self.n_bits <= 64:
            values = np.array([w.value for w in self.words], dtype=np.uint64)
        else:
            values = None
        object.__setattr__(self, "_values", values)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def is_full(self) -> bool:
        return self.structure.kind is StructureKind.FULL

    def __contains__(self, word: BitString) -> bool:
        if self.is_full:
            return word.width == self.n_bits
        return word.width == self.n_bits and word.value in self._index

    def index_of(self, word: BitString) -> Optional[int]:
        if word.width != self.n_bits:
            return None
        return word.value if self.is_full else self._index.get(word.value)

    def tag_bits(self) -> int:
        return self.structure.param if self.structure.kind is StructureKind.TAGGED else 0

    def accepts(self, word: BitString) -> bool:
        """Receiver-side integrity filter: tag check if tagged, else membership."""
        if self.structure.kind is StructureKind.TAGGED:
            return tag_valid(word, self.structure.param)
        return word in self

    def min_distance(self) -> int:
        if self.is_full:
            return 1 if self.n_bits else 0
        best = self.n_bits
        vals = [w.value for w in self.words]
        for a, b in itertools.combinations(vals, 2):
            best = min(best, (a ^ b).bit_count())
        return best

    def save(self, path: Union[str, Path]) -> None:
        lines = [f"# n={self.n_bits} m={self.m_bits} structure={self.structure}"]
        if not self.is_full:
            lines += [str(w) for w in self.words]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> Codebook:
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith("#"):
            raise CodebookError(f"{path}: missing header line")
        fields = dict(part.split("=", 1) for part in text[0][1:].split())
        try:
            n, m = int(fields["n"]), int(fields["m"])
            structure = Structure.parse(fields["structure"])
        except (KeyError, ValueError) as exc:
            raise CodebookError(f"{path}: bad header {text[0]!r}") from exc
        words = tuple(BitString.from_str(line) for line in text[1:] if line.strip())
        if structure.kind is StructureKind.FULL and words:
            raise CodebookError(f"{path}: a full codebook lists no words")
        return cls(words, n, m, structure)


def build_codebook(
    n: int,
    m: int,
    structure: Structure,
    rng: np.random.Generator,
    budget: int = GREEDY_BUDGET,
) -> Codebook:
    size = 2**m
    kind = structure.kind
    if kind is StructureKind.FULL:
        if m != n:
            raise CodebookError(f"a full codebook needs m == n, got m={m}, n={n}")
        return Codebook((), n, m, structure)
    if kind is StructureKind.RANDOM:
        if m > n:
            raise CodebookError(f"cannot pick 2^{m} distinct {n}-bit words")
        chosen: dict[int, None] = {}
        while len(chosen) < size:
            chosen[random_bits(n, rng).value] = None
        words = tuple(BitString(n, v) for v in chosen)
    elif kind is StructureKind.TAGGED:
        t = structure.param
        if not 1 <= t < n:
            raise CodebookError(f"tag_bits must be in 1..{n - 1}")
        if m > n - t:
            raise CodebookError(f"2^{m} words do not fit in {n - t} payload bits")
        payloads: dict[int, None] = {}
        while len(payloads) < size:
            payloads[random_bits(n - t, rng).value] = None
        words = tuple(with_tag(p, n, t) for p in payloads)
    else:
        words = _greedy_min_distance(n, size, structure.param, rng, budget)
    return Codebook(words, n, m, structure)


def _greedy_min_distance(
    n: int, size: int, d: int, rng: np.random.Generator, budget: int
) -> tuple[BitString, ...]:
    """Random-order greedy (Gilbert-Varshamov style) accumulation."""
    if d < 1:
        raise CodebookError("minimum distance must be >= 1")
    accepted: list[int] = []
    # small widths: track the union of radius-(d-1) balls so a saturated space fails fast
    covered = np.zeros(2**n, dtype=bool) if n <= 20 else None
    ball = None
    if covered is not None:
        offsets = np.arange(2**n, dtype=np.int64)
        ball = offsets[np.bitwise_count(offsets) <= d - 1]
    draws = 0
    while len(accepted) < size:
        if covered is not None and covered.all():
            raise CodebookError(
                f"min-distance {d}: space exhausted with {len(accepted)} of {size} words "
                f"after {draws} draws (budget {budget})"
            )
        if draws >= budget:
            raise CodebookError(
                f"min-distance {d}: only {len(accepted)} of {size} words within the "
                f"{budget}-candidate budget"
            )
        draws += 1
        cand = random_bits(n, rng).value
        if covered is not None:
            if covered[cand]:
                continue
            covered[ball ^ cand] = True
        elif any((cand ^ w).bit_count() < d for w in accepted):
            continue
        accepted.append(cand)
    return tuple(BitString(n, v) for v in accepted)


# --- estimation -------------------------------------------------------------------


class DecodeResult(enum.Enum):
    DECODED = "decoded"
    AMBIGUOUS = "ambiguous"
    NO_MATCH = "no-match"


@dataclass(frozen=True)
class DecodeOutcome:
    result: DecodeResult
    word: Optional[BitString]
    candidates_considered: int
    consistent: int = 0
    # two codewords share this attempt's output symbol (the disruption event)
    aliased: bool = False


def _book_values(book: Codebook) -> Union[np.ndarray, list[int]]:
    return book._values if book._values is not None else [w.value for w in book.words]


def _outcome(book: Codebook, hits, aliased: bool) -> DecodeOutcome:
    hits = list(hits)
    if len(hits) == 1:
        return DecodeOutcome(DecodeResult.DECODED, book.words[hits[0]], len(book), 1, aliased)
    result = DecodeResult.NO_MATCH if not hits else DecodeResult.AMBIGUOUS
    return DecodeOutcome(result, None, len(book), len(hits), aliased)


def _has_duplicates(values) -> bool:
    if isinstance(values, np.ndarray):
        return len(np.unique(values)) < len(values)
    return len(set(values)) < len(values)


def estimate(y: ObfuscatedBroadcast, book: Codebook, cfg: SchemeConfig) -> DecodeOutcome:
    """Best-effort recovery of the transmitted codeword from one broadcast."""
    if y.scheme_tag is not cfg.variant:
        raise SchemeError(f"broadcast tag {y.scheme_tag.name} does not match {cfg.variant.name}")
    if book.n_bits != cfg.n_bits:
        raise SchemeError(f"codebook width {book.n_bits} != n_bits {cfg.n_bits}")
    v = cfg.variant
    if v is Variant.PLAIN:
        idx = book.index_of(y.payload)
        hits = [] if idx is None else [idx]
        return DecodeOutcome(
            DecodeResult.DECODED if hits else DecodeResult.NO_MATCH,
            book.words[idx] if hits else None,
            1,
            len(hits),
        )
    if book.is_full:
        return _estimate_full(y, book, cfg)
    vals = _book_values(book)
    if v is Variant.KERRORS:
        k = y.hint.k
        if isinstance(vals, np.ndarray):
            dist = np.bitwise_count(vals ^ np.uint64(y.payload.value))
            hits = np.flatnonzero(dist == k).tolist()
        else:
            hits = [i for i, w in enumerate(vals) if (w ^ y.payload.value).bit_count() == k]
        return _outcome(book, hits, len(hits) > 1)
    if v is Variant.KERASURES:
        images = vals
        width = cfg.n_bits
    else:
        src = book._values if book._values is not None else list(book.words)
        images = digest_many(src, y.hint.salt, cfg)
        width = cfg.l_bits
        if width <= 64:
            images = np.asarray(images, dtype=np.uint64)
    mask = y.hint.mask
    keep = ~mask.inner.value & ((1 << width) - 1)
    target = restore_bits(y.payload, mask).value
    if isinstance(images, np.ndarray):
        kept = images & np.uint64(keep)
        hits = np.flatnonzero(kept == np.uint64(target)).tolist()
    else:
        kept = [w & keep for w in images]
        hits = [i for i, w in enumerate(kept) if w == target]
    return _outcome(book, hits, _has_duplicates(kept))


def _estimate_full(y: ObfuscatedBroadcast, book: Codebook, cfg: SchemeConfig) -> DecodeOutcome:
    """Closed-form decoding when every identity is a codeword."""
    n, k = cfg.n_bits, cfg.k
    if cfg.variant is Variant.KERRORS:
        consistent = math.comb(n, y.hint.k)
        word = y.payload if y.hint.k == 0 else None
    elif cfg.variant is Variant.KERASURES:
        consistent = 2**k
        word = restore_bits(y.payload, y.hint.mask) if k == 0 else None
    else:
        raise CodebookError("a full codebook cannot be searched under an ELISHA digest")
    if consistent == 1:
        return DecodeOutcome(DecodeResult.DECODED, word, len(book), 1)
    return DecodeOutcome(DecodeResult.AMBIGUOUS, None, len(book), consistent, True)


# --- preimage table ---------------------------------------------------------------


@dataclass(frozen=True)
class Infeasible:
    """The attack would need a table per salt value."""

    reason: str
    cost_log2_per_codeword: int
    cost_log2_total: int


@dataclass(frozen=True)
class PreimageTable:
    table: dict[int, int]
    book: Codebook
    collisions: int

    def __len__(self) -> int:
        return len(self.table)

    def decode(self, y: ObfuscatedBroadcast) -> DecodeOutcome:
        idx = self.table.get(y.payload.value)
        if idx is None:
            return DecodeOutcome(DecodeResult.NO_MATCH, None, 1)
        if idx < 0:
            return DecodeOutcome(DecodeResult.AMBIGUOUS, None, 1, 2, True)
        return DecodeOutcome(DecodeResult.DECODED, self.book.words[idx], 1, 1)


def preimage_attack(book: Codebook, cfg: SchemeConfig) -> Union[PreimageTable, Infeasible]:
    """Precompute digest -> codeword for an unsalted, unerased ELISHA broadcast."""
    if cfg.variant is not Variant.ELISHA:
        raise AttackPreconditionError("preimage tables target the ELISHA digest")
    if cfg.salt_bits > 0:
        s = cfg.salt_bits
        return Infeasible(
            f"salted digest: one table per salt, 2^{s} digests per codeword",
            s,
            s + book.m_bits,
        )
    if cfg.k != 0:
        raise AttackPreconditionError(
            f"k={cfg.k}: random erasures still alias digests, a table alone is insufficient"
        )
    empty = BitString(0, 0)
    table: dict[int, int] = {}
    collisions = 0
    for i, word in enumerate(book.words):
        d = digest(word, empty, cfg).value.value
        if d in table:
            table[d] = -1
            collisions += 1
        else:
            table[d] = i
    return PreimageTable(table, book, collisions)


# --- repetition against K-erasures ------------------------------------------------


def repetition_transmit(
    word: BitString, repeats: int, cfg: SchemeConfig, rng: np.random.Generator
) -> list[ObfuscatedBroadcast]:
    if cfg.variant is not Variant.KERASURES:
        raise AttackPreconditionError("repetition targets the K-erasures scheme")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    return [obfuscate(word, cfg, rng) for _ in range(repeats)]


@dataclass(frozen=True)
class Reconstruction:
    value: BitString
    known: BitString

    @property
    def complete(self) -> bool:
        return self.known.popcount() == self.known.width


def combine_repeats(broadcasts: Sequence[ObfuscatedBroadcast], n_bits: int) -> Reconstruction:
    """Merge every position seen unerased in at least one repeat."""
    value = 0
    known = 0
    full = (1 << n_bits) - 1
    for y in broadcasts:
        keep = ~y.hint.mask.inner.value & full
        value |= restore_bits(y.payload, y.hint.mask).value & keep
        known |= keep
    return Reconstruction(BitString(n_bits, value), BitString(n_bits, known))


def repetition_recovery_exact(n: int, k: int, repeats: int) -> Fraction:
    """P(every position survives in some repeat) for independent weight-k masks.

    Inclusion-exclusion over the positions erased in all repeats.
    """
    if not 0 <= k <= n or repeats < 1:
        raise ValueError("need 0 <= k <= n and repeats >= 1")
    total = math.comb(n, k)
    return sum(
        (Fraction((-1) ** j * math.comb(n, j)) * Fraction(math.comb(n - j, k - j), total) ** repeats)
        for j in range(k + 1)
    )


# --- disruption measurement -------------------------------------------------------


@dataclass(frozen=True)
class DisruptionReport:
    trials: int
    decoded: int
    wrong: int
    ambiguous: int
    no_match: int
    aliased: int
    reliable: int

    @property
    def success_rate(self) -> float:
        return self.decoded / self.trials

    @property
    def ambiguous_rate(self) -> float:
        return self.ambiguous / self.trials

    @property
    def no_match_rate(self) -> float:
        return self.no_match / self.trials

    @property
    def aliasing_rate(self) -> float:
        return self.aliased / self.trials

    @property
    def reliable_rate(self) -> float:
        """Correctly decoded in an attempt whose symbol set had no aliasing."""
        return self.reliable / self.trials


def measure_disruption(
    book: Codebook,
    cfg: SchemeConfig,
    trials: int,
    rng: np.random.Generator,
    table: Optional[PreimageTable] = None,
) -> DisruptionReport:
    """Send uniformly chosen codewords through ``cfg`` and tally the receiver's view."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    counts = dict(decoded=0, wrong=0, ambiguous=0, no_match=0, aliased=0, reliable=0)
    picks = rng.integers(0, len(book), size=trials)
    for i in picks.tolist():
        sent = book.words[i]
        y = obfuscate(sent, cfg, rng)
        out = table.decode(y) if table is not None else estimate(y, book, cfg)
        counts["aliased"] += out.aliased
        if out.result is DecodeResult.DECODED:
            if out.word == sent:
                counts["decoded"] += 1
                counts["reliable"] += not out.aliased
            else:
                counts["wrong"] += 1
        elif out.result is DecodeResult.AMBIGUOUS:
            counts["ambiguous"] += 1
        else:
            counts["no_match"] += 1
    return DisruptionReport(trials, **counts)
