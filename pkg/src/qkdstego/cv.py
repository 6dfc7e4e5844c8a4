"""Discrete-modulation CV-QKD runs (O4, E4, generic N-state, CV-BB84 over
PASCS, CV-B92) and the reverse-communication stego layer on top of their
conclusive-result announcements.

In every run the sender prepares, the receiver homodynes one random
quadrature and the receiver announces which results are conclusive. The
stego sender is the receiver: it hides a bit in the order of that
announcement.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .cvstate import (
    DEFAULT_X0, PostSelectOutcome, Quadrature, coherent_fock, coherent_quadrature_mean,
    pascs_fock, postselect_b92_array, postselect_e4_array, sample_quadratures,
)
from .errors import ConfigError, EmbeddingFailure
from .seeding import as_rng, split

E4 = "E4"
O4 = "O4"
NSTATE = "NState"
CV_BB84_PASCS = "CvBB84Pascs"
CV_B92 = "CvB92"
PROTOCOLS = (O4, E4, NSTATE, CV_BB84_PASCS, CV_B92)

# Reference efficiencies listed per protocol, and the listed generic formula.
REFERENCE_EFFICIENCY = {
    "O4": 1 / 2,
    "E4": 1.0,
    "three-state": 2 / 3,
    "six-state": 2 / 3,
    "eight-state": 3 / 4,
}


def n_state_formula(n: int) -> float:
    """The generic (2+N)/(2+2N) expression; disagrees with several listed values."""
    return (2 + n) / (2 + 2 * n)


# Unit-amplitude state shapes; the run scales them by alpha.
E4_SHAPES = (1 + 1j, 1 - 1j, -(1 + 1j), -(1 - 1j))
O4_SHAPES = (1, -1, 1j, -1j)
B92_SHAPES = (1, 1j)

X, P = Quadrature.POSITION, Quadrature.MOMENTUM

# Bit the sender assigns to (state index, quadrature). The positive-mean side
# of each quadrature carries 1. None means the signal is discarded.
E4_ENCODING = {
    (0, X): 1, (0, P): 1,
    (1, X): 1, (1, P): 0,
    (2, X): 0, (2, P): 0,
    (3, X): 0, (3, P): 1,
}
O4_ENCODING = {
    (0, X): 1, (0, P): None,
    (1, X): 0, (1, P): None,
    (2, X): None, (2, P): 1,
    (3, X): None, (3, P): 0,
}
# CV-B92: psi(alpha) is 0 and psi(i alpha) is 1 in both quadratures.
B92_ENCODING = {(0, X): 0, (0, P): 0, (1, X): 1, (1, P): 1}


@dataclass(frozen=True)
class CvProtocolSpec:
    name: str
    shapes: tuple[complex, ...]
    encoding: Mapping[tuple[int, int], Optional[int]]
    n_signals: int
    alpha: float
    x0: float = DEFAULT_X0
    pascs: bool = False

    def __post_init__(self):
        if self.name not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.name!r}")
        if self.n_signals < 1:
            raise ConfigError("n_signals must be at least 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if self.x0 < 0:
            raise ConfigError("x0 must be non-negative")
        object.__setattr__(self, "shapes", tuple(complex(s) for s in self.shapes))
        object.__setattr__(self, "encoding", dict(self.encoding))
        if self.name != CV_B92:
            validate_encoding(self.shapes, self.encoding)

    @property
    def amplitudes(self) -> tuple[complex, ...]:
        return tuple(self.alpha * s for s in self.shapes)

    def with_(self, **changes) -> "CvProtocolSpec":
        return replace(self, **changes)


def validate_encoding(shapes: Sequence[complex], encoding: Mapping) -> None:
    """Every (state, quadrature) pair mapped; a bit only where the state's mean
    in that quadrature is off-centre, and it must name the side it sits on."""
    for s, shape in enumerate(shapes):
        usable = 0
        for q in (X, P):
            if (s, q) not in encoding:
                raise ConfigError(f"encoding misses state {s}, quadrature {q.name}")
            bit = encoding[(s, q)]
            if bit is None:
                continue
            if bit not in (0, 1):
                raise ConfigError(f"encoding bit for ({s}, {q.name}) must be 0, 1 or None")
            mean = coherent_quadrature_mean(shape, q)
            if abs(mean) < 1e-12 or int(mean > 0) != bit:
                raise ConfigError(f"state {s} cannot carry bit {bit} in quadrature {q.name}")
            usable += 1
        if usable == 0:
            raise ConfigError(f"state {s} is never usable")
    extra = set(encoding) - {(s, q) for s in range(len(shapes)) for q in (X, P)}
    if extra:
        raise ConfigError(f"encoding names unknown states {sorted(extra)}")


def make_spec(name: str, alpha: float, x0: float = DEFAULT_X0, n_signals: int = 10_000,
              **kw) -> CvProtocolSpec:
    presets = {
        E4: (E4_SHAPES, E4_ENCODING, False),
        O4: (O4_SHAPES, O4_ENCODING, False),
        CV_BB84_PASCS: (O4_SHAPES, O4_ENCODING, True),
        CV_B92: (B92_SHAPES, B92_ENCODING, True),
    }
    if name == NSTATE:
        return CvProtocolSpec(NSTATE, kw.pop("shapes"), kw.pop("encoding"), n_signals, alpha, x0,
                              kw.pop("pascs", False))
    if name not in presets:
        raise ConfigError(f"unknown protocol {name!r}")
    shapes, enc, pascs = presets[name]
    return CvProtocolSpec(name, shapes, enc, n_signals, alpha, x0, pascs)


@dataclass(frozen=True, eq=False)
class CvTranscript:
    protocol: str
    sent: np.ndarray                 # state index per signal
    settings: np.ndarray             # Quadrature per signal
    raw_values: np.ndarray
    basis_confirmations: np.ndarray  # sender says the quadrature is usable
    sender_bits: np.ndarray          # -1 where the signal carries no bit
    receiver_bits: np.ndarray        # -1 unless confirmed and conclusive
    announced_conclusive: tuple[int, ...]
    x0: float
    receiver_raw_bits: Optional[np.ndarray] = None  # CV-B92 bits before the flip

    @property
    def conclusive(self) -> np.ndarray:
        return self.receiver_bits >= 0

    @property
    def conclusive_positions(self) -> np.ndarray:
        return np.flatnonzero(self.conclusive)

    @property
    def key_sender(self) -> np.ndarray:
        return self.sender_bits[np.asarray(self.announced_conclusive, dtype=np.int64)]

    @property
    def key_receiver(self) -> np.ndarray:
        return self.receiver_bits[np.asarray(self.announced_conclusive, dtype=np.int64)]

    @property
    def outcomes(self) -> list[PostSelectOutcome]:
        return [PostSelectOutcome(bool(b >= 0), int(b) if b >= 0 else None, float(v))
                for b, v in zip(self.receiver_bits, self.raw_values)]

    def usable_fraction(self) -> float:
        return float(self.basis_confirmations.mean())

    def conclusive_fraction(self) -> float:
        return float(self.conclusive.mean())

    def agreement(self) -> float:
        """Fraction of announced positions where sender and receiver bits match."""
        if not self.announced_conclusive:
            return float("nan")
        return float((self.key_sender == self.key_receiver).mean())


def _homodyne(spec: CvProtocolSpec, sent: np.ndarray, settings: np.ndarray,
              rng: np.random.Generator) -> np.ndarray:
    values = np.empty(len(sent))
    for s, amp in enumerate(spec.amplitudes):
        state = pascs_fock(amp)[0] if spec.pascs else coherent_fock(amp)
        for q in (X, P):
            idx = np.flatnonzero((sent == s) & (settings == q))
            if len(idx):
                values[idx] = sample_quadratures(state, q, rng, len(idx))
    return values


def _streams(rng):
    prep, meas, noise, ann = split(as_rng(rng), 4)
    return prep, meas, noise, ann


def n_state_run(spec: CvProtocolSpec, rng=None) -> CvTranscript:
    """Send, homodyne a random quadrature, announce it, sender confirms, announce conclusive."""
    if spec.name == CV_B92:
        raise ConfigError("CV-B92 has its own decision rule; use cvb92_run")
    prep, meas, noise, ann = _streams(rng)
    n = spec.n_signals
    sent = prep.integers(0, len(spec.shapes), n)
    settings = meas.integers(0, 2, n)
    values = _homodyne(spec, sent, settings, noise)

    table = np.full((len(spec.shapes), 2), -1, dtype=np.int8)
    for (s, q), bit in spec.encoding.items():
        if bit is not None:
            table[s, q] = bit
    sender_bits = table[sent, settings]
    confirmed = sender_bits >= 0
    receiver_bits = np.where(confirmed, postselect_e4_array(values, spec.x0), np.int8(-1)).astype(np.int8)
    conclusive = np.flatnonzero(receiver_bits >= 0)
    order = ann.permutation(conclusive)
    return CvTranscript(spec.name, sent, settings, values, confirmed,
                        np.where(confirmed, sender_bits, -1).astype(np.int8), receiver_bits,
                        tuple(int(i) for i in order), spec.x0)


def _require(spec: CvProtocolSpec, name: str):
    if spec.name != name:
        raise ConfigError(f"expected a {name} spec, got {spec.name}")


def e4_run(spec: CvProtocolSpec, rng=None) -> CvTranscript:
    _require(spec, E4)
    return n_state_run(spec, rng)


def o4_run(spec: CvProtocolSpec, rng=None) -> CvTranscript:
    _require(spec, O4)
    return n_state_run(spec, rng)


def cv_bb84_pascs_run(spec: CvProtocolSpec, rng=None) -> CvTranscript:
    _require(spec, CV_BB84_PASCS)
    return n_state_run(spec, rng)


def cvb92_run(spec: CvProtocolSpec, rng=None) -> CvTranscript:
    """Two PASCS, no sender confirmation; conclusive only on the far negative tail.

    The receiver's raw bit is the label of the quadrature it measured
    (position 0, momentum 1), which is anti-correlated with the sender's bit
    on conclusive results. Flipping it gives the key bit, which coincides
    with the x < -x0 -> 1, p < -x0 -> 0 rule.
    """
    _require(spec, CV_B92)
    prep, meas, noise, ann = _streams(rng)
    n = spec.n_signals
    sent = prep.integers(0, 2, n)
    settings = meas.integers(0, 2, n)
    values = _homodyne(spec, sent, settings, noise)
    decided = postselect_b92_array(values, spec.x0, settings)
    conclusive = decided >= 0
    raw = np.where(conclusive, settings, -1).astype(np.int8)
    receiver_bits = np.where(conclusive, 1 - raw, -1).astype(np.int8)
    sender_bits = np.array([B92_ENCODING[(0, X)], B92_ENCODING[(1, X)]], dtype=np.int8)[sent]
    order = ann.permutation(np.flatnonzero(conclusive))
    return CvTranscript(CV_B92, sent, settings, values, np.ones(n, dtype=bool), sender_bits,
                        receiver_bits, tuple(int(i) for i in order), spec.x0, raw)


RUNNERS = {E4: e4_run, O4: o4_run, NSTATE: n_state_run, CV_BB84_PASCS: cv_bb84_pascs_run,
           CV_B92: cvb92_run}


def run_protocol(spec: CvProtocolSpec, rng=None) -> CvTranscript:
    return RUNNERS[spec.name](spec, rng)


def reverse_embed_cv(transcript: CvTranscript, message_bit: int, d: int, rng=None) -> tuple[int, ...]:
    """Random announcement order whose d-th entry carries the message in the announcer's key."""
    rng = as_rng(rng)
    if message_bit not in (0, 1):
        raise ValueError("message bit must be 0 or 1")
    positions = transcript.conclusive_positions
    if len(positions) == 0:
        raise EmbeddingFailure("no conclusive results to announce")
    d = (d - 1) % len(positions) + 1
    bits = transcript.receiver_bits[positions]
    qualifying = np.flatnonzero(bits == message_bit)
    if len(qualifying) == 0:
        raise EmbeddingFailure(f"no conclusive result carries bit {message_bit}")
    chosen = int(rng.choice(qualifying))
    rest = rng.permutation(np.delete(np.arange(len(positions)), chosen))
    order = np.insert(rest, d - 1, chosen)
    return tuple(int(p) for p in positions[order])


def reverse_extract_cv(announcement, d: int, own_key_bits) -> int:
    """The extractor's bit at the d-th announced position (d wraps)."""
    ann = np.asarray(announcement, dtype=np.int64)
    if len(ann) == 0:
        raise ValueError("empty announcement")
    return int(np.asarray(own_key_bits)[ann[(d - 1) % len(ann)]])


def cv_reverse_run(spec: CvProtocolSpec, message_bit: int, d: int, rng=None,
                   embed: bool = True) -> CvTranscript:
    """A run whose announcement optionally carries a stego bit.

    Preparation, measurement and announcement draw from separate streams, so
    toggling ``embed`` leaves ``sent`` bit-for-bit unchanged.
    """
    run_rng, embed_rng = split(as_rng(rng), 2)
    tr = run_protocol(spec, run_rng)
    if not embed:
        return tr
    return replace(tr, announced_conclusive=reverse_embed_cv(tr, message_bit, d, embed_rng))


@dataclass(frozen=True)
class EfficiencyReport:
    protocol: str
    analytic_pe: Optional[float]
    empirical_pe: float
    trials: int
    formula_pe: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.empirical_pe <= 1.0:
            raise ValueError("empirical efficiency outside [0, 1]")


_ANALYTIC_KEY = {E4: "E4", O4: "O4"}


def efficiency_measure(spec: CvProtocolSpec, trials: int, rng=None) -> EfficiencyReport:
    """Fraction of signals not discarded for a basis mismatch (inconclusives still count)."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    tr = run_protocol(spec.with_(n_signals=trials), rng)
    key = _ANALYTIC_KEY.get(spec.name)
    if spec.name == CV_BB84_PASCS:
        key = "O4"
    analytic = REFERENCE_EFFICIENCY.get(key) if key else None
    formula = n_state_formula(len(spec.shapes)) if spec.name in (E4, O4, NSTATE) else None
    return EfficiencyReport(spec.name, analytic, tr.usable_fraction(), trials, formula)
