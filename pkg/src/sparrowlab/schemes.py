"""Broadcast obfuscation B(X), hint construction and the UE decision D(Y, X_i).

Four variants share one config type:

* ``PLAIN``      echo the identity (what deployed networks do today)
* ``KERRORS``    flip K random bits, hint carries K
* ``KERASURES``  delete K random bits, hint carries the erasure mask
* ``ELISHA``     digest (optionally salted), then delete K random digest bits;
                 hint carries mask and salt

Msg4 wire layout (``ObfuscatedBroadcast.to_bytes``)::

    tag:u8 | payload_bits:u16be | payload (byte padded) | hint fields

Hint fields, in order and only when the variant uses them: K as one byte,
the erasure mask as a byte-padded bitmap of the mask width, the salt as
ceil(S/8) bytes.

Note on sizes: a K-erasures broadcast carries N-K payload bits plus an N-bit
mask, i.e. 2N-K bits before padding (the analysis text quotes 2N+K; the
constructive layout here is what gets serialized).
"""

from __future__ import annotations

import enum
import hashlib
import struct
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sparrowlab.bitcore import (
    MAX_WIDTH,
    BitString,
    Mask,
    WidthMismatchError,
    erase_bits,
    hamming_distance,
    random_bits,
    random_weight_mask,
    xor_bits,
)

DEFAULT_SALT_BITS = 64
FEISTEL_ROUNDS = 8
_M64 = (1 << 64) - 1


class SchemeError(ValueError):
    """Scheme configuration or broadcast does not satisfy its contract."""


class Variant(enum.IntEnum):
    PLAIN = 0
    KERRORS = 1
    KERASURES = 2
    ELISHA = 3


class DigestBackend(enum.Enum):
    TRUNCATED_HASH = "truncated-hash"
    RANDOM_PERMUTATION = "random-permutation"
    RANDOM_ORACLE = "random-oracle"


class Decision(enum.Enum):
    PROCEED = "proceed"
    BACK_OFF = "back-off"


class RandomOracle:
    """Lazily sampled uniform function (x, s) -> L bits.

    Each unseen input pair gets a fresh uniform draw that is remembered; the
    table is guarded by a lock so one instance can be shared across threads.
    """

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self._table: dict[tuple[int, int, int], int] = {}
        self._lock = threading.Lock()

    def __call__(self, x: int, s: int, l_bits: int) -> int:
        key = (x, s, l_bits)
        with self._lock:
            out = self._table.get(key)
            if out is None:
                out = random_bits(l_bits, self._rng).value
                self._table[key] = out
            return out

    def __len__(self) -> int:
        return len(self._table)


@dataclass(frozen=True)
class SchemeConfig:
    variant: Variant
    n_bits: int = 40
    k: int = 0
    l_bits: int = 0
    salt_bits: int = 0
    digest_backend: DigestBackend = DigestBackend.TRUNCATED_HASH
    oracle: Optional[RandomOracle] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        v = self.variant
        if not 1 <= self.n_bits <= MAX_WIDTH:
            raise SchemeError(f"n_bits must be in 1..{MAX_WIDTH}, got {self.n_bits}")
        if v is Variant.PLAIN and self.k != 0:
            raise SchemeError("plain scheme requires k == 0")
        if v in (Variant.KERRORS, Variant.KERASURES) and not 0 <= self.k <= self.n_bits:
            raise SchemeError(f"k must be in 0..{self.n_bits}, got {self.k}")
        if v is Variant.ELISHA:
            if self.l_bits == 0:
                object.__setattr__(self, "l_bits", self.n_bits)
            if not self.n_bits <= self.l_bits <= MAX_WIDTH:
                raise SchemeError(f"l_bits must be in n_bits..{MAX_WIDTH}, got {self.l_bits}")
            if not 0 <= self.k <= self.l_bits:
                raise SchemeError(f"k must be in 0..{self.l_bits}, got {self.k}")
            if self.salt_bits < 0 or self.salt_bits > 8 * 255:
                raise SchemeError(f"salt_bits out of range: {self.salt_bits}")
            if self.digest_backend is DigestBackend.RANDOM_PERMUTATION:
                if self.l_bits != self.n_bits:
                    raise SchemeError("random permutation digest needs l_bits == n_bits")
                if self.n_bits > 64:
                    raise SchemeError("random permutation digest supports n_bits <= 64")
            if self.digest_backend is DigestBackend.RANDOM_ORACLE and self.oracle is None:
                object.__setattr__(self, "oracle", RandomOracle())
        elif self.l_bits or self.salt_bits:
            raise SchemeError("l_bits/salt_bits only apply to the ELISHA variant")

    @classmethod
    def plain(cls, n_bits: int = 40) -> SchemeConfig:
        return cls(Variant.PLAIN, n_bits)

    @classmethod
    def kerrors(cls, n_bits: int, k: int) -> SchemeConfig:
        return cls(Variant.KERRORS, n_bits, k)

    @classmethod
    def kerasures(cls, n_bits: int, k: int) -> SchemeConfig:
        return cls(Variant.KERASURES, n_bits, k)

    @classmethod
    def elisha(
        cls,
        n_bits: int,
        k: int,
        l_bits: int = 0,
        salt_bits: int = DEFAULT_SALT_BITS,
        backend: DigestBackend = DigestBackend.TRUNCATED_HASH,
        oracle: Optional[RandomOracle] = None,
    ) -> SchemeConfig:
        return cls(Variant.ELISHA, n_bits, k, l_bits or n_bits, salt_bits, backend, oracle)

    @property
    def mask_width(self) -> int:
        """Width of the erasure/error mask (0 for plain)."""
        if self.variant is Variant.ELISHA:
            return self.l_bits
        if self.variant is Variant.PLAIN:
            return 0
        return self.n_bits

    @property
    def payload_bits(self) -> int:
        return {
            Variant.PLAIN: self.n_bits,
            Variant.KERRORS: self.n_bits,
            Variant.KERASURES: self.n_bits - self.k,
            Variant.ELISHA: self.l_bits - self.k,
        }[self.variant]

    def as_dict(self) -> dict:
        return {
            "variant": self.variant.name.lower(),
            "n_bits": self.n_bits,
            "k": self.k,
            "l_bits": self.l_bits,
            "salt_bits": self.salt_bits,
            "digest_backend": self.digest_backend.value,
        }


@dataclass(frozen=True)
class Hint:
    k: Optional[int] = None
    mask: Optional[Mask] = None
    salt: Optional[BitString] = None


@dataclass(frozen=True)
class ObfuscatedBroadcast:
    """One Msg4: obfuscated payload B(X) plus the hint the UEs need."""

    payload: BitString
    hint: Hint
    scheme_tag: Variant

    def hint_bits(self) -> int:
        h = self.hint
        bits = 8 if h.k is not None else 0
        if h.mask is not None:
            bits += h.mask.width
        if h.salt is not None:
            bits += h.salt.width
        return bits

    def size_bits(self) -> int:
        """Unpadded payload + hint size."""
        return self.payload.width + self.hint_bits()

    def to_bytes(self) -> bytes:
        out = bytearray(struct.pack(">BH", int(self.scheme_tag), self.payload.width))
        out += self.payload.to_bytes()
        h = self.hint
        if self.scheme_tag is Variant.KERRORS:
            out.append(h.k)
        elif self.scheme_tag is Variant.KERASURES:
            out += h.mask.inner.to_bytes()
        elif self.scheme_tag is Variant.ELISHA:
            out += h.mask.inner.to_bytes()
            out += h.salt.to_bytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes, cfg: SchemeConfig) -> ObfuscatedBroadcast:
        """Parse a serialized Msg4; mask and salt widths come from ``cfg``."""
        tag, n_payload = struct.unpack_from(">BH", data)
        try:
            variant = Variant(tag)
        except ValueError:
            raise SchemeError(f"unknown scheme tag {tag}") from None
        if variant is not cfg.variant:
            raise SchemeError(f"broadcast tag {variant.name} does not match {cfg.variant.name}")
        pos = 3

        def take(width: int) -> BitString:
            nonlocal pos
            nbytes = (width + 7) // 8
            chunk = data[pos : pos + nbytes]
            if len(chunk) != nbytes:
                raise SchemeError("truncated broadcast")
            pos += nbytes
            return BitString.from_bytes(chunk, width)

        payload = take(n_payload)
        if variant is Variant.PLAIN:
            hint = Hint()
        elif variant is Variant.KERRORS:
            hint = Hint(k=take(8).value)
        elif variant is Variant.KERASURES:
            hint = Hint(mask=Mask(take(cfg.n_bits)))
        else:
            mask = Mask(take(cfg.l_bits))
            hint = Hint(mask=mask, salt=take(cfg.salt_bits))
        if pos != len(data):
            raise SchemeError(f"{len(data) - pos} trailing bytes in broadcast")
        return cls(payload, hint, variant)


@dataclass(frozen=True)
class Digest:
    value: BitString
    backend: DigestBackend
    salt: BitString


# --- keyed permutation -------------------------------------------------------


def _round_keys(salt: BitString) -> list[int]:
    raw = hashlib.blake2b(
        salt.to_bytes() + salt.width.to_bytes(2, "big"),
        digest_size=8 * FEISTEL_ROUNDS,
        person=b"sparrowlab-perm",
    ).digest()
    return [int.from_bytes(raw[8 * i : 8 * i + 8], "big") for i in range(FEISTEL_ROUNDS)]


def _mix(v, key):
    # splitmix64 finalizer; works on Python ints and on uint64 arrays
    z = (v ^ key) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _feistel(v, half: int, keys: list[int]):
    hmask = (1 << half) - 1
    left = (v >> half) & hmask
    right = v & hmask
    for key in keys:
        left, right = right, left ^ (_mix(right, key) >> (64 - half))
    return (left << half) | right


def permute(x: int, width: int, keys: list[int]) -> int:
    """Keyed bijection of [0, 2**width) (balanced Feistel + cycle walking)."""
    half = (width + 1) // 2
    y = _feistel(x, half, keys)
    while y >> width:
        y = _feistel(y, half, keys)
    return y


def permute_many(xs: np.ndarray, width: int, keys) -> np.ndarray:
    """Vectorized :func:`permute` for ``width <= 64``.

    ``keys`` holds one entry per round, each an int or an array broadcasting
    against ``xs`` (so a batch of rows can use one key schedule per row).
    """
    if width > 64:
        raise ValueError("vectorized permutation supports width <= 64")
    half = (width + 1) // 2
    keys64 = [np.asarray(k, dtype=np.uint64) for k in keys]
    ys = _feistel_np(np.asarray(xs, dtype=np.uint64), half, keys64)
    if 2 * half > width:
        w = np.uint64(width)
        out = (ys >> w) != 0
        while out.any():
            ys = np.where(out, _feistel_np(ys, half, keys64), ys)
            out = (ys >> w) != 0
    return ys


def _feistel_np(v: np.ndarray, half: int, keys: list[np.uint64]) -> np.ndarray:
    hmask = np.uint64((1 << half) - 1)
    h = np.uint64(half)
    down = np.uint64(64 - half)
    left = (v >> h) & hmask
    right = v & hmask
    for key in keys:
        z = right ^ key
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        left, right = right, left ^ (z >> down)
    return (left << h) | right


# --- digest -------------------------------------------------------------------


def _truncated_hash(x: BitString, s: BitString, l_bits: int) -> int:
    h = hashlib.sha256(s.to_bytes() + x.to_bytes()).digest()
    return int.from_bytes(h, "big") & ((1 << l_bits) - 1)


def digest(x: BitString, s: BitString, cfg: SchemeConfig) -> Digest:
    """Salted digest C(x, s) of width ``cfg.l_bits``; deterministic per (x, s)."""
    if x.width != cfg.n_bits:
        raise WidthMismatchError(f"identity width {x.width} != n_bits {cfg.n_bits}")
    if s.width != cfg.salt_bits:
        raise WidthMismatchError(f"salt width {s.width} != salt_bits {cfg.salt_bits}")
    backend = cfg.digest_backend
    if backend is DigestBackend.TRUNCATED_HASH:
        value = _truncated_hash(x, s, cfg.l_bits)
    elif backend is DigestBackend.RANDOM_PERMUTATION:
        value = permute(x.value, cfg.n_bits, _round_keys(s))
    else:
        value = cfg.oracle(x.value, s.value, cfg.l_bits)
    return Digest(BitString(cfg.l_bits, value), backend, s)


def digest_many(xs, s: BitString, cfg: SchemeConfig):
    """Digest values of many identities under one salt.

    ``xs`` is a list of BitStrings or a uint64 array of identity values; the
    permutation backend stays vectorized and returns an array in that case.
    """
    if isinstance(xs, np.ndarray):
        if cfg.digest_backend is DigestBackend.RANDOM_PERMUTATION:
            return permute_many(xs, cfg.n_bits, _round_keys(s))
        xs = [BitString(cfg.n_bits, int(v)) for v in xs]
    if cfg.digest_backend is DigestBackend.RANDOM_PERMUTATION and cfg.n_bits <= 64:
        arr = np.fromiter((x.value for x in xs), dtype=np.uint64, count=len(xs))
        return permute_many(arr, cfg.n_bits, _round_keys(s)).tolist()
    return [digest(x, s, cfg).value.value for x in xs]


def round_key_rows(salt_bits: int, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Key schedules for ``count`` fresh salts, shaped for :func:`permute_many` rows."""
    keys = np.array([_round_keys(random_bits(salt_bits, rng)) for _ in range(count)], dtype=np.uint64)
    return [keys[:, r : r + 1] for r in range(keys.shape[1])]


# --- obfuscation / decision ---------------------------------------------------


def obfuscate(x: BitString, cfg: SchemeConfig, rng: np.random.Generator) -> ObfuscatedBroadcast:
    if x.width != cfg.n_bits:
        raise WidthMismatchError(f"identity width {x.width} != n_bits {cfg.n_bits}")
    v = cfg.variant
    if v is Variant.PLAIN:
        return ObfuscatedBroadcast(x, Hint(), v)
    if v is Variant.KERRORS:
        e = random_weight_mask(cfg.n_bits, cfg.k, rng)
        return ObfuscatedBroadcast(xor_bits(x, e.inner), Hint(k=cfg.k), v)
    if v is Variant.KERASURES:
        e = random_weight_mask(cfg.n_bits, cfg.k, rng)
        return ObfuscatedBroadcast(erase_bits(x, e), Hint(mask=e), v)
    s = random_bits(cfg.salt_bits, rng)
    e = random_weight_mask(cfg.l_bits, cfg.k, rng)
    c = digest(x, s, cfg).value
    return ObfuscatedBroadcast(erase_bits(c, e), Hint(mask=e, salt=s), v)


def decide(y: ObfuscatedBroadcast, x_i: BitString, cfg: SchemeConfig) -> Decision:
    """What a contending UE holding ``x_i`` does after hearing ``y``."""
    if y.scheme_tag is not cfg.variant:
        raise SchemeError(f"broadcast tag {y.scheme_tag.name} does not match {cfg.variant.name}")
    if x_i.width != cfg.n_bits:
        raise WidthMismatchError(f"identity width {x_i.width} != n_bits {cfg.n_bits}")
    v = cfg.variant
    if v is Variant.PLAIN:
        ok = y.payload == x_i
    elif v is Variant.KERRORS:
        ok = hamming_distance(y.payload, x_i) == y.hint.k
    elif v is Variant.KERASURES:
        ok = erase_bits(x_i, y.hint.mask) == y.payload
    else:
        ok = erase_bits(digest(x_i, y.hint.salt, cfg).value, y.hint.mask) == y.payload
    return Decision.PROCEED if ok else Decision.BACK_OFF
