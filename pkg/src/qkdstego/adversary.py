"""Channel noise, intercept-resend eavesdropping and steganalysis.

BB84 symbols are integer labels 0..3 for |0>, |1>, |+>, |-> (see
``qstate.BB84_KETS``). Eve never sees the true labels: the detector works on
her own measurement outcomes, whose distribution is a fixed linear image of
the preparation priors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .qstate import BB84_KETS, EmbeddingParams, bb84_ensemble, mdep_solve

RANDOM_BB84_BASIS = "random_bb84_basis"
OPTIMAL_POVM = "optimal_povm"
ORACLE = "oracle"

MIN_EXPECTED_PER_CELL = 10
# Outcomes rarer than this under the null are treated as impossible.
DEAD_CELL = 1e-9


class InsufficientSampleError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelModel:
    """Per-symbol noise. ``depolarizing`` flips the bit value within its basis."""

    kind: str = "lossless"
    flip_probability: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lossless", "depolarizing"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip probability must be in [0, 1]")
        if self.kind == "lossless" and self.flip_probability != 0.0:
            raise ValueError("a lossless channel has no flip probability")

    @classmethod
    def depolarizing(cls, q: float) -> "ChannelModel":
        return cls("depolarizing", q)

    def apply(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels)
        if self.kind == "lossless":
            return labels.copy()
        flips = rng.random(labels.shape) < self.flip_probability
        return np.where(flips, labels ^ 1, labels)


@dataclass(frozen=True)
class EveStrategy:
    intercept_fraction: float = 1.0
    measurement: str = RANDOM_BB84_BASIS
    # Ensemble Eve optimises her POVM against when measurement is optimal_povm.
    hypothesis: EmbeddingParams = field(default_factory=lambda: EmbeddingParams(0.5, 1.0))

    def __post_init__(self):
        if not 0.0 <= self.intercept_fraction <= 1.0:
            raise ValueError("intercept fraction must be in [0, 1]")
        if self.measurement not in (RANDOM_BB84_BASIS, OPTIMAL_POVM):
            raise ValueError(f"unknown measurement {self.measurement!r}")


@lru_cache(maxsize=64)
def _povm_model(rate: float, bias: float) -> tuple[np.ndarray, np.ndarray]:
    """Response matrix P(outcome | sent label) and resend label per outcome."""
    ens = bb84_ensemble(EmbeddingParams(rate, bias))
    povm = mdep_solve(ens).povm
    rhos = ens.matrices()
    response = np.array([povm.probabilities(r) for r in rhos])
    response[response < DEAD_CELL] = 0.0
    response /= response.sum(axis=1, keepdims=True)
    # Resend the state with the largest posterior for each outcome.
    joint = np.array(ens.priors)[:, None] * response
    resend = joint.argmax(axis=0)
    response.setflags(write=False)
    resend.setflags(write=False)
    return response, resend


def _random_basis_response() -> np.ndarray:
    r = np.zeros((4, 4))
    for s in range(4):
        for basis in (0, 1):
            for bit in (0, 1):
                overlap = abs(np.vdot(BB84_KETS[2 * basis + bit], BB84_KETS[s])) ** 2
                r[s, 2 * basis + bit] = 0.5 * overlap
    return r


RANDOM_BASIS_RESPONSE = _random_basis_response()


def response_matrix(measurement: str, hypothesis: Optional[EmbeddingParams] = None,
                    n_labels: int = 4) -> np.ndarray:
    if measurement == ORACLE:
        return np.eye(n_labels)
    if measurement == RANDOM_BB84_BASIS:
        return RANDOM_BASIS_RESPONSE
    hyp = hypothesis or EmbeddingParams(0.5, 1.0)
    return _povm_model(hyp.rate, hyp.bias)[0]


@dataclass(frozen=True, eq=False)
class Observations:
    """Eve's recorded outcome labels, one per intercepted symbol."""

    outcomes: np.ndarray
    measurement: str = RANDOM_BB84_BASIS
    hypothesis: Optional[EmbeddingParams] = None
    intercepted: Optional[np.ndarray] = None
    n_labels: int = 4

    def __len__(self):
        return len(self.outcomes)

    def concatenate(self, other: "Observations") -> "Observations":
        if (other.measurement, other.hypothesis, other.n_labels) != (self.measurement, self.hypothesis, self.n_labels):
            raise ValueError("cannot merge observations from different measurements")
        return Observations(np.concatenate([self.outcomes, other.outcomes]),
                            self.measurement, self.hypothesis, None, self.n_labels)


def oracle_observations(labels: Sequence[int], n_labels: int = 4) -> Observations:
    """Observations made of the true sent labels (simulation-only view)."""
    return Observations(np.asarray(labels, dtype=np.int64), ORACLE, None, None, n_labels)


def intercept_resend(labels: np.ndarray, strategy: EveStrategy,
                     rng: np.random.Generator) -> tuple[Observations, np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    intercepted = rng.random(n) < strategy.intercept_fraction
    idx = np.flatnonzero(intercepted)
    forwarded = labels.copy()
    if strategy.measurement == RANDOM_BB84_BASIS:
        response = RANDOM_BASIS_RESPONSE
        resend = np.arange(4)
    else:
        response, resend = _povm_model(strategy.hypothesis.rate, strategy.hypothesis.bias)
    cdf = np.cumsum(response, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(len(idx))
    outcomes = (u[:, None] >= cdf[labels[idx]]).sum(axis=1)
    forwarded[idx] = resend[outcomes]
    hyp = strategy.hypothesis if strategy.measurement == OPTIMAL_POVM else None
    return Observations(outcomes, strategy.measurement, hyp, intercepted), forwarded


def estimate_embedding_rate(bit_counts: tuple[int, int]) -> float:
    n0, n1 = bit_counts
    if n0 + n1 < 1:
        raise ValueError("need at least one bit")
    return (n0 - n1) / (n0 + n1)


def chi_squared_sf(statistic: float, dof: int) -> float:
    return float(special.chdtrc(dof, statistic))


def chi_squared_uniform(counts: Sequence[int], expected: Optional[Sequence[float]] = None
                        ) -> tuple[float, float]:
    """Pearson goodness-of-fit against ``expected`` probabilities (uniform by default).

    Cells with zero expected probability are dropped; observations landing in
    them make the statistic infinite.
    """
    counts = np.asarray(counts, dtype=float)
    k = len(counts)
    probs = np.full(k, 1.0 / k) if expected is None else np.asarray(expected, dtype=float)
    probs = probs / probs.sum()
    total = counts.sum()
    live = probs > DEAD_CELL
    if total * probs[live].min() < MIN_EXPECTED_PER_CELL:
        raise InsufficientSampleError(
            f"{int(total)} samples give fewer than {MIN_EXPECTED_PER_CELL} expected per cell")
    if np.any(counts[~live] > 0):
        return float("inf"), 0.0
    exp = total * probs[live]
    stat = float(((counts[live] - exp) ** 2 / exp).sum())
    return stat, chi_squared_sf(stat, int(live.sum()) - 1)


@dataclass(frozen=True)
class DetectionReport:
    state_counts: tuple[int, ...]
    bit_counts: tuple[int, int]
    chi2_statistic: float
    p_value: float
    estimated_rate: float
    verdict: bool
    significance: float
    samples: int
    measurement: str
    induced_qber: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "state_counts": list(self.state_counts),
            "bit_counts": list(self.bit_counts),
            "chi2_statistic": self.chi2_statistic,
            "p_value": self.p_value,
            "estimated_rate": self.estimated_rate,
            "verdict": self.verdict,
            "significance": self.significance,
            "samples": self.samples,
            "measurement": self.measurement,
            "induced_qber": self.induced_qber,
        }


def steganalyze(observations: Observations, significance: float = 0.01,
                induced_qber: Optional[float] = None) -> DetectionReport:
    """Test Eve's outcome histogram against what an honest (uniform) run produces.

    The rate estimate inverts the measurement's response: the fraction of
    outcomes carrying bit 0 is affine in the sender's bit-0 probability.
    """
    if len(observations) == 0:
        raise ValueError("no observations")
    k = observations.n_labels
    counts = np.bincount(observations.outcomes, minlength=k)[:k]
    response = response_matrix(observations.measurement, observations.hypothesis, k)
    null = response.mean(axis=0)
    stat, p = chi_squared_uniform(counts, null)

    outcome_bit = np.arange(k) % 2
    bit_counts = (int(counts[outcome_bit == 0].sum()), int(counts[outcome_bit == 1].sum()))
    sent_bit = np.arange(response.shape[0]) % 2
    obs0 = response[:, outcome_bit == 0].sum(axis=1)
    a0, a1 = obs0[sent_bit == 0].mean(), obs0[sent_bit == 1].mean()
    raw = estimate_embedding_rate(bit_counts)
    if abs(a0 - a1) < 1e-9:
        rate = float("nan")  # outcome bits carry no information about sent bits
    else:
        p0 = (bit_counts[0] / sum(bit_counts) - a1) / (a0 - a1)
        rate = float(np.clip(2.0 * p0 - 1.0, -1.0, 1.0))
    if observations.measurement == ORACLE:
        rate = raw
    return DetectionReport(
        state_counts=tuple(int(c) for c in counts),
        bit_counts=bit_counts,
        chi2_statistic=stat,
        p_value=p,
        estimated_rate=rate,
        verdict=bool(p < significance),
        significance=significance,
        samples=int(counts.sum()),
        measurement=observations.measurement,
        induced_qber=induced_qber,
    )


def mdep_curve(rates: Sequence[float], bias: float = 1.0) -> list[dict]:
    rows = []
    for e in rates:
        res = mdep_solve(bb84_ensemble(EmbeddingParams(float(e), bias)))
        rows.append({"E": float(e), "mdep": res.error_probability, "converged": res.converged})
    return rows
