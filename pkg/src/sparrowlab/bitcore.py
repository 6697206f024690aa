"""Fixed-width bit strings and the handful of operations the schemes need.

Bit position 0 is the most significant bit everywhere in this package.
Erasure keeps the surviving bits in their original order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_WIDTH = 256


class WidthMismatchError(ValueError):
    """Two bit strings of different widths were combined."""


@dataclass(frozen=True, slots=True)
class BitString:
    """Immutable ``width``-bit value; renders as a big-endian binary string."""

    width: int
    value: int

    def __post_init__(self):
        if not 0 <= self.width <= MAX_WIDTH:
            raise ValueError(f"width must be in 0..{MAX_WIDTH}, got {self.width}")
        if not 0 <= self.value < (1 << self.width) or (self.width == 0 and self.value != 0):
            raise ValueError(f"value {self.value} does not fit in {self.width} bits")

    @classmethod
    def from_str(cls, text: str) -> BitString:
        text = text.strip()
        if any(c not in "01" for c in text):
            raise ValueError(f"not a binary string: {text!r}")
        return cls(len(text), int(text, 2) if text else 0)

    @classmethod
    def from_bytes(cls, data: bytes, width: int) -> BitString:
        """Inverse of :meth:`to_bytes`: the low ``width`` bits of ``data``."""
        return cls(width, int.from_bytes(data, "big") & ((1 << width) - 1))

    @classmethod
    def zeros(cls, width: int) -> BitString:
        return cls(width, 0)

    @classmethod
    def ones(cls, width: int) -> BitString:
        return cls(width, (1 << width) - 1)

    def to_bytes(self) -> bytes:
        """Big-endian, left-padded with zero bits to a whole number of bytes."""
        return self.value.to_bytes((self.width + 7) // 8, "big")

    def popcount(self) -> int:
        return self.value.bit_count()

    def complement(self) -> BitString:
        return BitString(self.width, self.value ^ ((1 << self.width) - 1))

    def __len__(self) -> int:
        return self.width

    def __getitem__(self, pos: int) -> int:
        if pos < 0:
            pos += self.width
        if not 0 <= pos < self.width:
            raise IndexError(pos)
        return (self.value >> (self.width - 1 - pos)) & 1

    def __iter__(self):
        for pos in range(self.width):
            yield (self.value >> (self.width - 1 - pos)) & 1

    def __str__(self) -> str:
        return format(self.value, f"0{self.width}b") if self.width else ""

    def __repr__(self) -> str:
        return f"BitString('{self}')"


@dataclass(frozen=True, slots=True)
class Mask:
    """A bit string whose set bits mark the K selected positions."""

    inner: BitString

    @property
    def weight(self) -> int:
        return self.inner.popcount()

    @property
    def width(self) -> int:
        return self.inner.width

    def positions(self) -> list[int]:
        return [i for i, b in enumerate(self.inner) if b]

    def __str__(self) -> str:
        return str(self.inner)


def _check_widths(a: BitString, b: BitString) -> None:
    if a.width != b.width:
        raise WidthMismatchError(f"width mismatch: {a.width} vs {b.width}")


def xor_bits(a: BitString, b: BitString) -> BitString:
    _check_widths(a, b)
    return BitString(a.width, a.value ^ b.value)


def erase_bits(x: BitString, m: Mask) -> BitString:
    """Drop the bits of ``x`` where ``m`` is set; survivors keep their order."""
    _check_widths(x, m.inner)
    keep = ~m.inner.value
    out = 0
    n_out = 0
    for pos in range(x.width - 1, -1, -1):
        shift = x.width - 1 - pos
        if (keep >> shift) & 1:
            out |= ((x.value >> shift) & 1) << n_out
            n_out += 1
    return BitString(n_out, out)


def restore_bits(y: BitString, m: Mask, fill: int = 0) -> BitString:
    """Inverse of :func:`erase_bits`: put ``fill`` back at the masked positions."""
    if y.width + m.weight != m.width:
        raise WidthMismatchError(
            f"payload width {y.width} + mask weight {m.weight} != mask width {m.width}"
        )
    out = 0
    src = y.width - 1
    for pos in range(m.width):
        shift = m.width - 1 - pos
        if (m.inner.value >> shift) & 1:
            bit = fill
        else:
            bit = (y.value >> src) & 1
            src -= 1
        out |= bit << shift
    return BitString(m.width, out)


def hamming_distance(a: BitString, b: BitString) -> int:
    _check_widths(a, b)
    return (a.value ^ b.value).bit_count()


def random_bits(width: int, rng: np.random.Generator) -> BitString:
    """Uniform ``width``-bit string."""
    if width == 0:
        return BitString(0, 0)
    raw = int.from_bytes(rng.bytes((width + 7) // 8), "big")
    return BitString(width, raw & ((1 << width) - 1))


def random_weight_mask(width: int, k: int, rng: np.random.Generator) -> Mask:
    """Uniform draw over all C(width, k) masks of weight exactly ``k``.

    Partial Fisher-Yates: the first ``k`` slots of a shuffled position list.
    """
    if not 0 <= width <= MAX_WIDTH:
        raise ValueError(f"width must be in 0..{MAX_WIDTH}, got {width}")
    if not 0 <= k <= width:
        raise ValueError(f"k must be in 0..{width}, got {k}")
    if k == 0:
        return Mask(BitString(width, 0))
    if k == width:
        return Mask(BitString.ones(width))
    picks = rng.integers(np.arange(k), width)
    positions = list(range(width))
    value = 0
    for i, j in enumerate(picks.tolist()):
        positions[i], positions[j] = positions[j], positions[i]
        value |= 1 << (width - 1 - positions[i])
    return Mask(BitString(width, value))


def random_weight_masks(width: int, k: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent weight-k masks as uint64 (same algorithm, vectorized)."""
    if not 0 <= width <= 64:
        raise ValueError("batched masks support width <= 64")
    if not 0 <= k <= width:
        raise ValueError(f"k must be in 0..{width}, got {k}")
    pos = np.tile(np.arange(width), (count, 1))
    rows = np.arange(count)
    if 0 < k < width:
        picks = rng.integers(np.arange(k), width, size=(count, k))
        for i in range(k):
            j = picks[:, i]
            pos[rows, i], pos[rows, j] = pos[rows, j], pos[rows, i].copy()
    bits = np.zeros(count, dtype=np.uint64)
    for i in range(k):
        bits |= np.uint64(1) << (np.uint64(width - 1) - pos[:, i].astype(np.uint64))
    return bits
