"""Slot-level simulation of random-access contention with a covert pair.

One slot is one RA exchange plus backoff (tau = exchange_ms + backoff_ms).
Per slot the transmitter sends one codeword on the agreed preamble, Poisson
background UEs pick preambles uniformly, each preamble group gets one Msg4
(its Msg3 receiver chosen uniformly), and the passive receiver inspects every
Msg4 in the cell.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from sparrowlab.adversary import Codebook, DecodeResult, StructureKind, estimate
from sparrowlab.analytics import CollisionStats, Method, binomial_ci
from sparrowlab.bitcore import BitString, random_bits, random_weight_masks
from sparrowlab.schemes import (
    Decision,
    DigestBackend,
    SchemeConfig,
    Variant,
    decide,
    obfuscate,
    permute_many,
    round_key_rows,
)


class LivenessError(AssertionError):
    """The UE whose Msg3 was received backed off."""


class TopologyError(ValueError):
    pass


class Outcome(enum.Enum):
    RESOLVED = "resolved"
    IDENTITY_COLLISION = "identity-collision"


@dataclass(frozen=True)
class SimConfig:
    scheme: SchemeConfig
    exchange_ms: float = 30.0
    backoff_ms: float = 10.0
    background_rate: float = 0.0
    duration_s: float = 60.0
    seed: int = 0
    n_preambles: int = 64

    def __post_init__(self):
        if self.exchange_ms <= 0:
            raise ValueError("exchange_ms must be positive")
        if self.backoff_ms < 0:
            raise ValueError("backoff_ms must be non-negative")
        if self.background_rate < 0:
            raise ValueError("background_rate must be non-negative")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.n_preambles < 1:
            raise ValueError("n_preambles must be >= 1")

    @property
    def tau_ms(self) -> float:
        return self.exchange_ms + self.backoff_ms

    def as_dict(self) -> dict:
        out = {"scheme": self.scheme.as_dict()}
        out.update(
            exchange_ms=self.exchange_ms,
            backoff_ms=self.backoff_ms,
            background_rate=self.background_rate,
            duration_s=self.duration_s,
            seed=self.seed,
            n_preambles=self.n_preambles,
        )
        return out


@dataclass
class TrialReport:
    attempts: int
    covert_bits_delivered: int
    simulated_s: float
    goodput_bps: float
    chunks_total: int
    chunks_delivered: int
    contentions: int
    identity_collisions: int
    empirical_p_c: float
    p_c_ci: tuple[float, float]
    trudy_broadcasts: int
    disrupted: int
    disruption_rate: float
    background_broadcasts: int
    false_accepts: int
    false_accept_rate: float
    attributed: int
    attribution_accuracy: float
    liveness_violations: int
    seed: int
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def contention_trial(scheme: SchemeConfig, n_contenders: int, rng: np.random.Generator) -> Outcome:
    """One Msg3/Msg4 round; contender 0 is the one whose Msg3 was received."""
    if n_contenders < 2:
        raise ValueError("contention needs at least two UEs")
    ids = [random_bits(scheme.n_bits, rng) for _ in range(n_contenders)]
    y = obfuscate(ids[0], scheme, rng)
    if decide(y, ids[0], scheme) is not Decision.PROCEED:
        raise LivenessError(f"received UE backed off under {scheme.variant.name}")
    for x in ids[1:]:
        if decide(y, x, scheme) is Decision.PROCEED:
            return Outcome.IDENTITY_COLLISION
    return Outcome.RESOLVED


def estimate_pc_montecarlo(
    scheme: SchemeConfig,
    trials: int,
    rng: np.random.Generator,
    vectorized: bool = True,
) -> CollisionStats:
    """Two-contender collision rate with a 95% binomial interval.

    The vectorized kernel evaluates the same decision rules over batches of
    draws; it covers identity widths up to 63 bits and the permutation digest.
    Everything else runs :func:`contention_trial` one trial at a time.
    """
    if trials < 10**4:
        raise ValueError("use at least 10^4 trials")
    if vectorized and _batch_supported(scheme):
        hits = 0
        done = 0
        while done < trials:
            t = min(BATCH, trials - done)
            x1, x2, masks, keys = draw_contention_batch(scheme, t, rng)
            winner_ok, loser_ok = decide_batch(scheme, x1, x2, masks, keys)
            if not winner_ok.all():
                raise LivenessError(f"received UE backed off under {scheme.variant.name}")
            hits += int(loser_ok.sum())
            done += t
    else:
        hits = sum(
            contention_trial(scheme, 2, rng) is Outcome.IDENTITY_COLLISION for _ in range(trials)
        )
    p = hits / trials
    log2 = math.log2(p) if hits else -math.inf
    return CollisionStats(
        p, log2, Method.MONTE_CARLO, trials, binomial_ci(hits, trials), collisions=hits
    )


BATCH = 1 << 16


def _batch_supported(scheme: SchemeConfig) -> bool:
    if scheme.n_bits > 63:
        return False
    if scheme.variant is Variant.ELISHA:
        return scheme.digest_backend is DigestBackend.RANDOM_PERMUTATION
    return True


def draw_contention_batch(scheme: SchemeConfig, t: int, rng: np.random.Generator):
    """Identities, masks and (ELISHA) key schedules for ``t`` two-UE rounds."""
    ids = rng.integers(0, 1 << scheme.n_bits, size=(2, t), dtype=np.uint64)
    masks = random_weight_masks(scheme.mask_width, scheme.k, t, rng)
    keys = None
    if scheme.variant is Variant.ELISHA:
        keys = [k[:, 0] for k in round_key_rows(scheme.salt_bits, t, rng)]
    return ids[0], ids[1], masks, keys


def decide_batch(scheme: SchemeConfig, x1, x2, masks, keys=None):
    """Vectorized decisions of the received UE (x1) and the other contender (x2)."""
    k = scheme.k
    full = np.uint64((1 << scheme.mask_width) - 1) if scheme.mask_width else np.uint64(0)
    v = scheme.variant
    if v is Variant.PLAIN:
        return x1 == x1, x1 == x2
    if v is Variant.KERRORS:
        y = x1 ^ masks
        return np.bitwise_count(y ^ x1) == k, np.bitwise_count(y ^ x2) == k
    keep = ~masks & full
    if v is Variant.KERASURES:
        return (x1 ^ x1) & keep == 0, (x1 ^ x2) & keep == 0
    c1 = permute_many(x1, scheme.n_bits, keys)
    c2 = permute_many(x2, scheme.n_bits, keys)
    c1_again = permute_many(x1, scheme.n_bits, keys)
    return (c1 ^ c1_again) & keep == 0, (c1 ^ c2) & keep == 0


def _receiver_accepts(y, book: Codebook, cfg: SchemeConfig):
    """Receiver's filter. Returns (accepted, decoded word or None, disrupted)."""
    if cfg.variant is Variant.PLAIN and book.structure.kind is StructureKind.TAGGED:
        if not book.accepts(y.payload):
            return False, None, False
        return True, y.payload, False
    out = estimate(y, book, cfg)
    disrupted = out.aliased or out.result is DecodeResult.AMBIGUOUS
    return out.result is DecodeResult.DECODED, out.word, disrupted


def run_covert_session(
    sim: SimConfig,
    book: Codebook,
    message_bits: int,
    rng: Optional[np.random.Generator] = None,
) -> TrialReport:
    """Push a random ``message_bits`` message through the cell, chunk by chunk.

    The session stops when every chunk has been sent or ``duration_s`` runs
    out. A chunk counts as delivered only when it is the single broadcast the
    receiver accepted in that slot, it decodes to the sent codeword, and the
    attempt's symbol set was free of aliasing. The transmitter resends a chunk
    after losing contention (its own decision says back off).
    """
    if len(book) == 0:
        raise ValueError("empty codebook")
    m = book.m_bits
    if message_bits < m:
        raise ValueError(f"message_bits ({message_bits}) must be >= codebook m_bits ({m})")
    if rng is None:
        rng = np.random.default_rng(sim.seed)
    cfg = sim.scheme
    n = cfg.n_bits
    max_slots = int(math.floor(sim.duration_s * 1000.0 / sim.tau_ms + 1e-9))
    n_chunks = math.ceil(message_bits / m) if m else message_bits
    symbols = rng.integers(0, len(book), size=n_chunks)
    chunk_bits = [min(m, message_bits - i * m) for i in range(n_chunks)]

    c = dict(
        attempts=0, bits=0, delivered=0, contentions=0, collisions=0, trudy=0, disrupted=0,
        bg=0, false_acc=0, attributed=0, attributed_ok=0, liveness=0,
    )
    chunk = 0
    while chunk < n_chunks and c["attempts"] < max_slots:
        c["attempts"] += 1
        word = book.words[symbols[chunk]]
        n_bg = int(rng.poisson(sim.background_rate)) if sim.background_rate > 0 else 0
        groups: dict[int, list[tuple[BitString, bool]]] = {0: [(word, True)]}
        for _ in range(n_bg):
            pre = int(rng.integers(sim.n_preambles))
            groups.setdefault(pre, []).append((random_bits(n, rng), False))

        broadcasts = []
        trudy_proceeds = False
        for pre in sorted(groups):
            members = groups[pre]
            win = int(rng.integers(len(members))) if len(members) > 1 else 0
            x, from_trudy = members[win]
            y = obfuscate(x, cfg, rng)
            if decide(y, x, cfg) is not Decision.PROCEED:
                c["liveness"] += 1
            if len(members) > 1:
                c["contentions"] += 1
                losers = [mx for j, (mx, _) in enumerate(members) if j != win]
                if any(decide(y, mx, cfg) is Decision.PROCEED for mx in losers):
                    c["collisions"] += 1
            if pre == 0:
                trudy_proceeds = decide(y, word, cfg) is Decision.PROCEED
            broadcasts.append((y, from_trudy))

        accepted = []
        for y, from_trudy in broadcasts:
            ok, decoded, disrupted = _receiver_accepts(y, book, cfg)
            if from_trudy:
                c["trudy"] += 1
                c["disrupted"] += disrupted
            else:
                c["bg"] += 1
                c["false_acc"] += ok
            if ok:
                accepted.append((decoded, from_trudy, disrupted))
        if len(accepted) == 1:
            decoded, from_trudy, disrupted = accepted[0]
            c["attributed"] += 1
            if from_trudy and decoded == word and not disrupted:
                c["attributed_ok"] += 1
                c["delivered"] += 1
                c["bits"] += chunk_bits[chunk]
        if trudy_proceeds:
            chunk += 1

    elapsed_ms = c["attempts"] * sim.tau_ms
    contentions = c["contentions"]
    return TrialReport(
        attempts=c["attempts"],
        covert_bits_delivered=c["bits"],
        simulated_s=elapsed_ms / 1000.0,
        goodput_bps=c["bits"] * 1000.0 / elapsed_ms if elapsed_ms else 0.0,
        chunks_total=n_chunks,
        chunks_delivered=c["delivered"],
        contentions=contentions,
        identity_collisions=c["collisions"],
        empirical_p_c=c["collisions"] / contentions if contentions else 0.0,
        p_c_ci=binomial_ci(c["collisions"], contentions) if contentions else (0.0, 1.0),
        trudy_broadcasts=c["trudy"],
        disrupted=c["disrupted"],
        disruption_rate=c["disrupted"] / c["trudy"] if c["trudy"] else 0.0,
        background_broadcasts=c["bg"],
        false_accepts=c["false_acc"],
        false_accept_rate=c["false_acc"] / c["bg"] if c["bg"] else 0.0,
        attributed=c["attributed"],
        attribution_accuracy=c["attributed_ok"] / c["attributed"] if c["attributed"] else 0.0,
        liveness_violations=c["liveness"],
        seed=sim.seed,
        config=sim.as_dict(),
    )


# --- multi-cell topologies --------------------------------------------------------


class TopologyMode(enum.Enum):
    SINGLE_CELL = "single-cell"
    PARALLEL = "parallel"
    RELAY_CHAIN = "relay-chain"


@dataclass(frozen=True)
class Cell:
    cell_id: str
    sim: SimConfig


@dataclass(frozen=True)
class RelayLink:
    src: str
    dst: str
    latency_attempts: int = 1


@dataclass(frozen=True)
class Topology:
    cells: tuple[Cell, ...]
    links: tuple[RelayLink, ...] = ()
    mode: TopologyMode = TopologyMode.SINGLE_CELL

    def chain_order(self) -> list[str]:
        """Cell ids from origin to final cell; validates the relay path."""
        ids = [c.cell_id for c in self.cells]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate cell ids")
        if self.mode is TopologyMode.SINGLE_CELL:
            if len(ids) != 1 or self.links:
                raise TopologyError("single-cell topology takes one cell and no links")
            return ids
        if self.mode is TopologyMode.PARALLEL:
            if self.links:
                raise TopologyError("parallel cells share no relay links")
            return ids
        nxt: dict[str, str] = {}
        indeg = {i: 0 for i in ids}
        for link in self.links:
            if link.src not in indeg or link.dst not in indeg:
                raise TopologyError(f"link {link.src}->{link.dst} names an unknown cell")
            if link.src in nxt:
                raise TopologyError(f"cell {link.src} relays to more than one cell")
            if link.latency_attempts < 0:
                raise TopologyError("relay latency must be non-negative")
            nxt[link.src] = link.dst
            indeg[link.dst] += 1
        starts = [i for i in ids if indeg[i] == 0]
        if len(starts) != 1 or any(v > 1 for v in indeg.values()):
            raise TopologyError("relay links must form a single acyclic path (cycle or fork found)")
        order = [starts[0]]
        while order[-1] in nxt:
            order.append(nxt[order[-1]])
            if len(order) > len(ids):
                raise TopologyError("relay links contain a cycle")
        if len(order) != len(ids):
            raise TopologyError("relay path does not visit every cell")
        return order


@dataclass
class TopologyReport:
    mode: str
    per_cell: dict[str, TrialReport]
    aggregate_goodput_bps: float
    end_to_end_latency_attempts: int


def run_topology(
    topo: Topology, book: Codebook, message_bits: int, rng: np.random.Generator
) -> TopologyReport:
    """Parallel cells add goodput; a relay chain runs at its slowest hop.

    Relay latency is the sum of per-link latencies (attempt slots); parallel
    and single cells deliver after one attempt.
    """
    order = topo.chain_order()
    by_id = {c.cell_id: c for c in topo.cells}
    streams = rng.spawn(len(order))
    per_cell = {
        cid: run_covert_session(by_id[cid].sim, book, message_bits, s)
        for cid, s in zip(order, streams)
    }
    goodputs = [r.goodput_bps for r in per_cell.values()]
    if topo.mode is TopologyMode.RELAY_CHAIN:
        aggregate = min(goodputs)
        latency = sum(link.latency_attempts for link in topo.links)
    else:
        aggregate = sum(goodputs)
        latency = 1
    return TopologyReport(topo.mode.value, per_cell, aggregate, latency)
