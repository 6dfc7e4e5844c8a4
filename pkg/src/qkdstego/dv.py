"""BB84 transmission and sifting, check-bit stego embedding (direct mode) and
the reverse-communication BB84 variant.

Positions are raw qubit indices into the transmitted string. "Slots" are
indices into the sorted list of sifted positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .adversary import ChannelModel, EveStrategy, Observations, intercept_resend
from .errors import EmbeddingFailure, ProtocolError
from .qstate import EmbeddingParams, classical_bit_distribution
from .seeding import as_rng, split

DEFAULT_ABORT_QBER = 0.11


def default_delta(m: int) -> int:
    return math.ceil(0.1 * m) + 10


@dataclass(frozen=True)
class DvConfig:
    m: int
    delta: Optional[int] = None
    abort_qber: float = DEFAULT_ABORT_QBER
    channel: ChannelModel = field(default_factory=ChannelModel)

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if self.delta is None:
            object.__setattr__(self, "delta", default_delta(self.m))
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if not 0.0 <= self.abort_qber <= 1.0:
            raise ValueError("abort_qber must be in [0, 1]")

    @property
    def n_qubits(self) -> int:
        return 4 * (self.m + self.delta)


@dataclass(frozen=True, eq=False)
class Transcript:
    prepared: np.ndarray          # labels 0..3 (basis = label // 2, bit = label % 2)
    measured_bases: np.ndarray
    measured_bits: np.ndarray
    sift_positions: np.ndarray
    m: int
    aborted: bool
    announcements: tuple[int, ...] = ()
    check_positions: tuple[int, ...] = ()
    qber: Optional[float] = None
    eve: Optional[Observations] = None

    @property
    def prepared_bases(self) -> np.ndarray:
        return self.prepared // 2

    @property
    def prepared_bits(self) -> np.ndarray:
        return self.prepared % 2

    @property
    def sifted_key_sender(self) -> np.ndarray:
        return self.prepared_bits[self.sift_positions]

    @property
    def sifted_key_receiver(self) -> np.ndarray:
        return self.measured_bits[self.sift_positions]

    def slot_of(self, position: int) -> int:
        slot = int(np.searchsorted(self.sift_positions, position))
        if slot >= len(self.sift_positions) or self.sift_positions[slot] != position:
            raise ProtocolError(f"position {position} is not a sifted position")
        return slot


@dataclass(frozen=True)
class StegoPlanDirect:
    message_bit: int
    displacement: int
    check_count: int

    def __post_init__(self):
        if self.message_bit not in (0, 1):
            raise ValueError("message bit must be 0 or 1")
        if self.displacement < 1:
            raise ValueError("displacement must be at least 1")
        if self.check_count < 1:
            raise ValueError("need at least one check bit")


def displacement_next(previous_key_length: Optional[int], m: int) -> int:
    """(p mod m) + 1; the first run (no previous key) uses 1."""
    if m < 1:
        raise ValueError("m must be positive")
    if previous_key_length is None:
        return 1
    return previous_key_length % m + 1


def prepare_symbols(n: int, rng: np.random.Generator,
                    params: Optional[EmbeddingParams] = None) -> np.ndarray:
    """Uniform bases; bit values uniform or skewed by the embedding model."""
    bases = rng.integers(0, 2, n)
    p0 = 0.5 if params is None else classical_bit_distribution(params)[0]
    bits = (rng.random(n) >= p0).astype(np.int64)
    return 2 * bases + bits


def measure_bb84(labels: np.ndarray, bases: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    coin = rng.integers(0, 2, len(labels))
    return np.where(labels // 2 == bases, labels % 2, coin)


def transmit(n: int, m: int, rng=None, preparation: Optional[EmbeddingParams] = None,
             channel: Optional[ChannelModel] = None, eve: Optional[EveStrategy] = None) -> Transcript:
    """Prepare n symbols, pass them through Eve and the channel, measure and sift."""
    rng = as_rng(rng)
    channel = channel or ChannelModel()
    prep_rng, eve_rng, chan_rng, meas_rng = split(rng, 4)
    prepared = prepare_symbols(n, prep_rng, preparation)
    in_flight = prepared
    observations = None
    if eve is not None:
        observations, in_flight = intercept_resend(prepared, eve, eve_rng)
    in_flight = channel.apply(in_flight, chan_rng)
    bases = meas_rng.integers(0, 2, n)
    bits = measure_bb84(in_flight, bases, meas_rng)
    sift = np.flatnonzero(prepared // 2 == bases)
    return Transcript(
        prepared=prepared,
        measured_bases=bases,
        measured_bits=bits,
        sift_positions=sift,
        m=m,
        aborted=len(sift) < 2 * m,
        eve=observations,
    )


def bb84_run(config: DvConfig, preparation: Optional[EmbeddingParams] = None, rng=None,
             eve: Optional[EveStrategy] = None) -> Transcript:
    """One BB84 block of 4(m + delta) qubits; aborted when fewer than 2m bits survive sifting."""
    return transmit(config.n_qubits, config.m, rng, preparation, config.channel, eve)


def sifted_qber(transcript: Transcript) -> float:
    """Error rate over the whole sifted key (simulation view, no bits sacrificed)."""
    if len(transcript.sift_positions) == 0:
        return float("nan")
    return float((transcript.sifted_key_sender != transcript.sifted_key_receiver).mean())


def mqs_embed_direct(transcript: Transcript, plan: StegoPlanDirect, rng=None) -> tuple[int, ...]:
    """Choose check positions so the last one points d slots left of the stego bit.

    Returns ``check_count - 1`` random check positions followed by the pointer.
    The stego position itself is never announced.
    """
    rng = as_rng(rng)
    if transcript.aborted:
        raise ProtocolError("cannot embed into an aborted run")
    d = plan.displacement
    key = transcript.sifted_key_sender
    n_slots = len(key)
    candidates = np.flatnonzero(key == plan.message_bit)
    candidates = candidates[candidates >= d]
    if len(candidates) == 0:
        raise EmbeddingFailure(f"no sifted bit equal to {plan.message_bit} with displacement {d}")
    stego = int(rng.choice(candidates))
    pointer = stego - d
    others = np.setdiff1d(np.arange(n_slots), [stego, pointer])
    if len(others) < plan.check_count - 1:
        raise ProtocolError("not enough sifted bits for the requested check bits")
    random_checks = rng.choice(others, plan.check_count - 1, replace=False)
    slots = [*random_checks.tolist(), pointer]
    return tuple(int(transcript.sift_positions[s]) for s in slots)


def mqs_extract_direct(transcript: Transcript, announcements, d: int) -> int:
    if len(announcements) == 0:
        raise ProtocolError("empty announcement")
    slot = transcript.slot_of(int(announcements[-1])) + d
    if slot >= len(transcript.sift_positions):
        raise ProtocolError(f"displacement {d} runs past the sifted key")
    return int(transcript.sifted_key_receiver[slot])


def qber_check(transcript: Transcript, announcements, abort_qber: float = DEFAULT_ABORT_QBER
               ) -> tuple[float, bool]:
    pos = np.asarray(announcements, dtype=np.int64)
    if len(pos) == 0:
        raise ValueError("no check positions announced")
    errors = transcript.prepared_bits[pos] != transcript.measured_bits[pos]
    qber = float(errors.mean())
    return qber, qber > abort_qber


def final_key(transcript: Transcript, check_positions) -> tuple[np.ndarray, np.ndarray]:
    """Sifted keys with the check positions removed (the stego bit stays in)."""
    keep = np.setdiff1d(transcript.sift_positions, np.asarray(check_positions, dtype=np.int64))
    return transcript.prepared_bits[keep], transcript.measured_bits[keep]


@dataclass(frozen=True, eq=False)
class MqsResult:
    transcript: Transcript
    announcements: tuple[int, ...]
    recovered_bit: int
    qber: float
    aborted: bool


def mqs_run(config: DvConfig, message_bit: int, d: int, rng=None,
            eve: Optional[EveStrategy] = None) -> MqsResult:
    """One full direct-mode run: BB84, check-bit embedding, extraction and QBER test."""
    rng = as_rng(rng)
    run_rng, embed_rng = split(rng, 2)
    tr = bb84_run(config, None, run_rng, eve)
    if tr.aborted:
        raise ProtocolError("sift too small; run aborted")
    plan = StegoPlanDirect(message_bit, d, config.m)
    ann = mqs_embed_direct(tr, plan, embed_rng)
    qber, abort = qber_check(tr, ann, config.abort_qber)
    tr = replace(tr, announcements=ann, check_positions=ann, qber=qber)
    return MqsResult(tr, ann, mqs_extract_direct(tr, ann, d), qber, abort)


def wrap_displacement(d: int, n: int) -> int:
    if n < 1:
        raise EmbeddingFailure("nothing to announce")
    return (d - 1) % n + 1


def _ordered_with_stego(positions: np.ndarray, bits: np.ndarray, message_bit: int, d: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation of ``positions`` conditioned on entry d carrying ``message_bit``."""
    d = wrap_displacement(d, len(positions))
    qualifying = np.flatnonzero(bits == message_bit)
    if len(qualifying) == 0:
        raise EmbeddingFailure(f"no announced position carries bit {message_bit}")
    chosen = int(rng.choice(qualifying))
    rest = rng.permutation(np.delete(np.arange(len(positions)), chosen))
    order = np.insert(rest, d - 1, chosen)
    return positions[order]


def bb84_reverse_run(config: DvConfig, message_bit: int, d: int, rng=None, variant: str = "B",
                     embed: bool = True, eve: Optional[EveStrategy] = None
                     ) -> tuple[Transcript, tuple[int, ...]]:
    """Reverse-communication run: the stego receiver prepares, the stego sender measures.

    The preparer's distribution is always uniform. The measuring party hides
    the bit in its sifting announcement:

    * variant "B": sifted positions announced in random order with the d-th
      one carrying the message in the announcer's own key;
    * variant "A": true sifted positions in increasing order, then one
      mismatched-basis position whose place points d sifted slots back to the
      stego position. The preparer drops that last position from the key.

    With ``embed=False`` the announcement is an honest random ordering
    (variant B) or the sorted sifted list (variant A). The preparation stream
    is independent of the announcement stream, so ``prepared`` is identical
    either way for a fixed seed.
    """
    if message_bit not in (0, 1):
        raise ValueError("message bit must be 0 or 1")
    if variant not in ("A", "B"):
        raise ValueError("variant must be 'A' or 'B'")
    rng = as_rng(rng)
    run_rng, ann_rng = split(rng, 2)
    tr = bb84_run(config, None, run_rng, eve)
    if tr.aborted:
        raise ProtocolError("sift too small; run aborted")
    sift = tr.sift_positions
    own_bits = tr.sifted_key_receiver
    if variant == "B":
        if embed:
            ann = _ordered_with_stego(sift, own_bits, message_bit, d, ann_rng)
        else:
            ann = ann_rng.permutation(sift)
        return tr, tuple(int(p) for p in ann)

    if not embed:
        return tr, tuple(int(p) for p in sift)
    d = wrap_displacement(d, len(sift))
    mismatched = np.flatnonzero(tr.prepared_bases != tr.measured_bases)
    # The stego slot s needs a mismatched position after slot s + d - 1 and
    # before slot s + d (or anywhere after it when s + d - 1 is the last slot).
    upper = np.append(sift[1:], np.iinfo(np.int64).max)
    options = []
    for s in np.flatnonzero(own_bits == message_bit):
        j = s + d - 1
        if j >= len(sift):
            continue
        lo, hi = sift[j], upper[j]
        a, b = np.searchsorted(mismatched, [lo, hi])
        if b > a:
            options.append((s, a, b))
    if not options:
        raise EmbeddingFailure("no mismatched position at the required displacement")
    s, a, b = options[int(ann_rng.integers(len(options)))]
    fake = int(mismatched[int(ann_rng.integers(a, b))])
    return tr, (*(int(p) for p in sift), fake)


def reverse_extract_dv(transcript: Transcript, announcements, d: int, variant: str = "B") -> int:
    """Stego bit as read by the preparing party from its own key."""
    ann = np.asarray(announcements, dtype=np.int64)
    if len(ann) == 0:
        raise ProtocolError("empty announcement")
    bits = transcript.prepared_bits
    if variant == "B":
        return int(bits[ann[wrap_displacement(d, len(ann)) - 1]])
    fake = ann[-1]
    d = wrap_displacement(d, len(ann) - 1)
    before = np.sort(ann[:-1][ann[:-1] < fake])
    if len(before) < d:
        raise ProtocolError(f"displacement {d} runs past the announced positions")
    return int(bits[before[-d]])


def reverse_receiver_key(transcript: Transcript, announcements, variant: str = "B") -> np.ndarray:
    """The preparing party's key: announced positions, minus the substituted one in variant A."""
    ann = np.asarray(announcements, dtype=np.int64)
    if variant == "A":
        ann = ann[:-1]
    return transcript.prepared_bits[np.sort(ann)]
