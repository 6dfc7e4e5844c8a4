"""Qubit states, ensembles, POVMs and minimum-error discrimination.

Everything here is 2x2 complex linear algebra. Objects are immutable once
built and every operation is a pure function, so they can be shared freely
between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
EIGEN_FLOOR = -1e-12
POVM_TOL = 1e-10

KET_0 = np.array([1.0, 0.0], dtype=complex)
KET_1 = np.array([0.0, 1.0], dtype=complex)
KET_PLUS = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)
KET_MINUS = np.array([1.0, -1.0], dtype=complex) / np.sqrt(2.0)

# Order used everywhere a BB84 symbol is an integer label:
# 0 -> |0>, 1 -> |1>, 2 -> |+>, 3 -> |->. basis = label // 2, bit = label % 2.
BB84_KETS = (KET_0, KET_1, KET_PLUS, KET_MINUS)
BB84_LABELS = ("0", "1", "+", "-")


class InvalidStateError(ValueError):
    """Raised when an object violates its quantum-mechanical invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        if amps.shape != (2,):
            raise InvalidStateError(f"qubit state needs 2 amplitudes, got {amps.shape}")
        if abs(np.vdot(amps, amps).real - 1.0) > 1e-12:
            raise InvalidStateError("state vector is not normalised")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_unnormalised(cls, amplitudes) -> "PureState":
        v = np.asarray(amplitudes, dtype=complex)
        return cls(v / np.linalg.norm(v))

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    entries: np.ndarray

    def __post_init__(self):
        rho = _frozen(self.entries)
        if rho.shape != (2, 2):
            raise InvalidStateError(f"expected a 2x2 matrix, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
            raise InvalidStateError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"trace {np.trace(rho).real!r} != 1")
        if np.linalg.eigvalsh(rho).min() < EIGEN_FLOOR:
            raise InvalidStateError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "entries", rho)

    @classmethod
    def from_ket(cls, ket) -> "DensityMatrix":
        return PureState.from_unnormalised(ket).density()


@dataclass(frozen=True)
class Ensemble:
    states: tuple[DensityMatrix, ...]
    priors: tuple[float, ...]

    def __post_init__(self):
        states = tuple(s if isinstance(s, DensityMatrix) else DensityMatrix(s) for s in self.states)
        priors = tuple(float(p) for p in self.priors)
        if len(states) == 0 or len(states) != len(priors):
            raise InvalidStateError("ensemble needs equal, non-zero numbers of states and priors")
        if any(p < 0.0 or p > 1.0 for p in priors):
            raise InvalidStateError("priors must lie in [0, 1]")
        if abs(sum(priors) - 1.0) > 1e-12:
            raise InvalidStateError(f"priors sum to {sum(priors)!r}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "priors", priors)

    def __len__(self) -> int:
        return len(self.states)

    def matrices(self) -> np.ndarray:
        return np.stack([s.entries for s in self.states])


@dataclass(frozen=True)
class Povm:
    effects: tuple[np.ndarray, ...]

    def __post_init__(self):
        effects = tuple(_frozen(e) for e in self.effects)
        if not effects:
            raise InvalidStateError("a POVM needs at least one effect")
        for e in effects:
            if e.shape != (2, 2):
                raise InvalidStateError("POVM effects must be 2x2")
            if np.max(np.abs(e - e.conj().T)) > POVM_TOL:
                raise InvalidStateError("POVM effect is not Hermitian")
            if np.linalg.eigvalsh(e).min() < -POVM_TOL:
                raise InvalidStateError("POVM effect is not positive semi-definite")
        if np.max(np.abs(sum(effects) - np.eye(2))) > POVM_TOL:
            raise InvalidStateError("POVM effects do not sum to the identity")
        object.__setattr__(self, "effects", effects)

    def __len__(self) -> int:
        return len(self.effects)

    def probabilities(self, rho: DensityMatrix | np.ndarray) -> np.ndarray:
        """Outcome distribution Tr(M_i rho), clipped into [0, 1] and renormalised."""
        r = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho)
        probs = np.array([np.trace(e @ r).real for e in self.effects])
        probs = np.clip(probs, 0.0, None)
        return probs / probs.sum()


@dataclass(frozen=True)
class EmbeddingParams:
    """Embedding rate E (stego bits per QKD bit) and message bias b = P(stego bit is 0)."""

    rate: float = 0.0
    bias: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"embedding rate must be in [0, 1], got {self.rate}")
        if not 0.0 <= self.bias <= 1.0:
            raise ValueError(f"bias must be in [0, 1], got {self.bias}")


def _bb84_prior_fractions(params: EmbeddingParams) -> list[Fraction]:
    e = Fraction(params.rate)
    b = Fraction(params.bias)
    zero = (1 - e) / 4 + e * b / 2
    one = (1 - e) / 4 + e * (1 - b) / 2
    return [zero, one, zero, one]


def bb84_priors(params: EmbeddingParams) -> np.ndarray:
    return np.array([float(f) for f in _bb84_prior_fractions(params)])


def bb84_ensemble(params: EmbeddingParams) -> Ensemble:
    """The four BB84 states with priors skewed by embedding rate and bias.

    Priors are evaluated as exact rationals of E and b, so they sum to one
    without rounding error. At ``bias=1`` they are ``(1+E)/4, (1-E)/4`` repeated.
    """
    fracs = _bb84_prior_fractions(params)
    # The largest prior absorbs the rounding of the others, so the exact
    # (math.fsum) total is 1 and a near-zero prior never goes negative.
    big = max(range(len(fracs)), key=lambda i: fracs[i])
    floats = [float(f) for f in fracs]
    floats[big] = 0.0
    floats[big] = float(1 - sum(Fraction(f) for f in floats))
    return Ensemble(tuple(DensityMatrix.from_ket(k) for k in BB84_KETS), tuple(floats))


def classical_bit_distribution(params: EmbeddingParams) -> tuple[float, float]:
    fracs = _bb84_prior_fractions(params)
    p0 = fracs[0] + fracs[2]
    return float(p0), float(1 - p0)


def ensemble_average(ensemble: Ensemble) -> DensityMatrix:
    avg = np.einsum("i,ijk->jk", np.array(ensemble.priors), ensemble.matrices())
    return DensityMatrix((avg + avg.conj().T) / 2)


def mdep_helstrom(state0: DensityMatrix, p0: float, state1: DensityMatrix, p1: float) -> float:
    """Two-state minimum error probability, (1 - ||p0 rho0 - p1 rho1||_1) / 2."""
    if abs(p0 + p1 - 1.0) > 1e-12 or min(p0, p1) < 0.0:
        raise ValueError("priors must be non-negative and sum to 1")
    gamma = p0 * state0.entries - p1 * state1.entries
    trace_norm = np.abs(np.linalg.eigvalsh((gamma + gamma.conj().T) / 2)).sum()
    return float(max(0.0, 0.5 * (1.0 - trace_norm)))


@dataclass(frozen=True)
class MdepResult:
    povm: Povm
    success_probability: float
    error_probability: float
    converged: bool
    iterations: int
    dual_bound: float = field(default=float("nan"))

    def __iter__(self):
        # Unpacks as (povm, success, error).
        return iter((self.povm, self.success_probability, self.error_probability))


def _inv_sqrt_psd(g: np.ndarray, floor: float = 1e-15) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-inverse square root and the projector onto the kernel."""
    w, v = np.linalg.eigh(g)
    keep = w > floor * max(1.0, w.max())
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / np.sqrt(w[keep])
    kernel = v[:, ~keep]
    return (v * inv) @ v.conj().T, kernel @ kernel.conj().T


def _success(weighted: np.ndarray, effects: np.ndarray) -> float:
    return float(np.einsum("ijk,ikj->", effects, weighted).real)


def _dual_upper_bound(weighted: np.ndarray, effects: np.ndarray) -> float:
    # Any Y >= p_i rho_i for all i bounds P_success by Tr(Y).
    lam = np.einsum("ijk,ikl->jl", weighted, effects)
    lam = (lam + lam.conj().T) / 2
    shift = max(0.0, max(-np.linalg.eigvalsh(lam - w).min() for w in weighted))
    return float(np.trace(lam).real + 2.0 * shift)


def mdep_solve(ensemble: Ensemble, tolerance: float = 1e-12, max_iterations: int = 100_000,
               damping: float = 0.5) -> MdepResult:
    """Minimum-error POVM by damped fixed-point iteration.

    Each step maps ``M_i -> G^{-1/2} A_i M_i A_i G^{-1/2}`` with ``A_i = p_i rho_i``
    and ``G = sum_i A_i M_i A_i``, then mixes with the previous iterate. Both
    the map and the mixing preserve positivity and completeness. Iteration
    stops once the success probability moves by less than ``tolerance``.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    priors = np.array(ensemble.priors)
    weighted = priors[:, None, None] * ensemble.matrices()
    n = len(ensemble)
    effects = np.repeat(np.eye(2, dtype=complex)[None] / n, n, axis=0)
    best_choice = int(np.argmax(priors))

    previous = _success(weighted, effects)
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        g = np.einsum("ijk,ikl,ilm->jm", weighted, effects, weighted)
        g = (g + g.conj().T) / 2
        root, kernel = _inv_sqrt_psd(g)
        new = np.einsum("jk,ikl,ilm,imn,np->ijp", root, weighted, effects, weighted, root)
        # Directions no state reaches go to the most likely guess.
        new[best_choice] += kernel
        new = (new + np.conj(np.transpose(new, (0, 2, 1)))) / 2
        effects = damping * effects + (1.0 - damping) * new
        current = _success(weighted, effects)
        if abs(current - previous) < tolerance:
            converged = True
            break
        previous = current

    effects = _project_to_povm(effects)
    success = min(1.0, max(0.0, _success(weighted, effects)))
    return MdepResult(
        povm=Povm(tuple(effects)),
        success_probability=success,
        error_probability=1.0 - success,
        converged=converged,
        iterations=it,
        dual_bound=_dual_upper_bound(weighted, effects),
    )


def _project_to_povm(effects: np.ndarray) -> np.ndarray:
    """Remove round-off: clip tiny negative eigenvalues and re-complete to identity."""
    cleaned = []
    for e in effects:
        w, v = np.linalg.eigh((e + e.conj().T) / 2)
        cleaned.append((v * np.clip(w, 0.0, None)) @ v.conj().T)
    cleaned = np.array(cleaned)
    total = cleaned.sum(axis=0)
    root, _ = _inv_sqrt_psd(total)
    return np.einsum("jk,ikl,lm->ijm", root, cleaned, root)


def bloch_vector(rho: DensityMatrix) -> np.ndarray:
    r = rho.entries
    return np.array([2 * r[0, 1].real, -2 * r[0, 1].imag, (r[0, 0] - r[1, 1]).real])


def mdep_bruteforce(ensemble: Ensemble, resolution: int = 64) -> float:
    """Grid oracle for the minimum error probability (for tests only).

    Rank-one effects ``w_k (I + n_k.sigma) / 2`` are placed on a latitude /
    longitude grid of Bloch directions; each effect guesses the state with the
    largest weighted overlap. The weights are then optimised exactly under the
    completeness constraints with a linear programme. Every feasible point is a
    genuine POVM, so the result never undercuts the true optimum.
    """
    from scipy.optimize import linprog

    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    theta = np.linspace(0.0, np.pi, resolution + 1)
    phi = np.linspace(0.0, 2.0 * np.pi, 2 * resolution, endpoint=False)
    t, f = np.meshgrid(theta[1:-1], phi, indexing="ij")
    dirs = np.column_stack([
        np.sin(t).ravel() * np.cos(f).ravel(),
        np.sin(t).ravel() * np.sin(f).ravel(),
        np.cos(t).ravel(),
    ])
    dirs = np.vstack([dirs, [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    # Include the directions of the states themselves and their antipodes.
    blochs = np.array([bloch_vector(s) for s in ensemble.states])
    norms = np.linalg.norm(blochs, axis=1)
    extra = blochs[norms > 1e-12] / norms[norms > 1e-12, None]
    dirs = np.vstack([dirs, extra, -extra])

    priors = np.array(ensemble.priors)
    overlaps = priors[None, :] * (1.0 + dirs @ blochs.T) / 2.0
    gain = overlaps.max(axis=1)

    a_eq = np.vstack([np.ones(len(dirs)), dirs.T])
    b_eq = np.array([2.0, 0.0, 0.0, 0.0])
    res = linprog(-gain, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"oracle LP failed: {res.message}")
    return float(1.0 - (-res.fun))


def _entropy_bits(eigs: np.ndarray) -> float:
    eigs = eigs[eigs > 1e-15]
    return float(-(eigs * np.log2(eigs)).sum())


def coherence_measures(rho: DensityMatrix) -> tuple[float, float]:
    """(l1-norm coherence, relative entropy of coherence in bits), computational basis."""
    r = rho.entries
    l1 = float(np.abs(r).sum() - np.abs(np.diag(r)).sum())
    diag = np.clip(np.diag(r).real, 0.0, None)
    rel = _entropy_bits(diag) - _entropy_bits(np.linalg.eigvalsh(r))
    return l1, max(0.0, rel)


def ensemble_from_kets(kets: Sequence, priors: Sequence[float]) -> Ensemble:
    return Ensemble(tuple(DensityMatrix.from_ket(k) for k in kets), tuple(priors))
