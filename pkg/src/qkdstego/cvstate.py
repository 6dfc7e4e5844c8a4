"""Coherent states and PASCS in a truncated number basis, quadrature
densities and simulated homodyne detection.

Quadrature convention: x = (a + a^dag)/2, p = (a - a^dag)/(2i). A coherent
state |beta> then has Gaussian quadratures centred on Re(beta) and Im(beta)
with variance VACUUM_VARIANCE.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

VACUUM_VARIANCE = 0.25
VACUUM_SD = math.sqrt(VACUUM_VARIANCE)
# Rescales the textbook sqrt(2)-normalised oscillator coordinate to ours.
_COORD_SCALE = math.sqrt(1.0 / (2.0 * VACUUM_VARIANCE))

DEFAULT_X0 = 0.4
TABLE_POINTS = 4096
TABLE_HALF_WIDTH_SD = 10.0
NORM_TOL = 1e-8
TAIL_TOL = 1e-10


class CutoffError(ValueError):
    def __init__(self, required: int, given: int):
        super().__init__(f"Fock cutoff {given} is too small; need at least {required}")
        self.required = required
        self.given = given


class Quadrature(enum.IntEnum):
    POSITION = 0
    MOMENTUM = 1


@dataclass(frozen=True)
class PostSelectOutcome:
    conclusive: bool
    bit: Optional[int]
    raw_value: float

    def __post_init__(self):
        if self.conclusive != (self.bit is not None):
            raise ValueError("a bit is present exactly when the outcome is conclusive")


@dataclass(frozen=True, eq=False)
class FockVector:
    """Number-basis amplitudes c_0..c_cutoff.

    ``kind`` and ``alpha`` record how the vector was built so that samplers
    can use the exact Gaussian for coherent states.
    """

    coefficients: np.ndarray
    kind: str = "generic"
    alpha: complex = 0j

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=complex)
        c.setflags(write=False)
        if abs(np.vdot(c, c).real - 1.0) > NORM_TOL:
            raise ValueError("Fock vector is not normalised")
        if abs(c[-1]) ** 2 >= TAIL_TOL:
            raise ValueError("Fock vector has weight at its cutoff; increase the cutoff")
        object.__setattr__(self, "coefficients", c)

    @property
    def cutoff(self) -> int:
        return len(self.coefficients) - 1

    def photon_number_mean(self) -> float:
        n = np.arange(len(self.coefficients))
        return float((n * np.abs(self.coefficients) ** 2).sum())

    def rotated(self, setting: Quadrature) -> np.ndarray:
        """Coefficients whose position quadrature equals ``setting`` of this state."""
        if setting == Quadrature.POSITION:
            return self.coefficients
        n = np.arange(len(self.coefficients))
        return self.coefficients * (-1j) ** n

    def quadrature_moments(self, setting: Quadrature) -> tuple[float, float]:
        """Mean and variance of the chosen quadrature from ladder-operator algebra."""
        c = self.rotated(setting)
        n = np.arange(1, len(c))
        a_c = np.append(np.sqrt(n) * c[1:], 0.0)  # a|psi>
        mean_a = np.vdot(c, a_c)
        a2 = np.vdot(c, np.append(np.sqrt(n[:-1] * n[1:]) * c[2:], [0.0, 0.0]))
        n_mean = float((np.arange(len(c)) * np.abs(c) ** 2).sum())
        mean = mean_a.real
        second = 0.25 * (2 * a2.real + 2 * n_mean + 1.0)
        return float(mean), float(second - mean ** 2)


def auto_cutoff(alpha: complex) -> int:
    mu = abs(alpha) ** 2
    return int(math.ceil(mu + 10.0 * math.sqrt(mu + 1.0) + 20.0))


def _coherent_raw(alpha: complex, cutoff: int) -> np.ndarray:
    """Untruncated-normalisation amplitudes e^{-|a|^2/2} a^n / sqrt(n!), n <= cutoff."""
    c = np.empty(cutoff + 1, dtype=complex)
    c[0] = math.exp(-abs(alpha) ** 2 / 2.0)
    for n in range(1, cutoff + 1):
        c[n] = c[n - 1] * alpha / math.sqrt(n)
    return c


def coherent_fock(alpha: complex, cutoff: Optional[int] = None) -> FockVector:
    alpha = complex(alpha)
    if cutoff is None:
        cutoff = auto_cutoff(alpha)
    c = _coherent_raw(alpha, cutoff)
    kept = np.vdot(c, c).real
    if kept < 1.0 - TAIL_TOL or abs(c[-1]) ** 2 >= TAIL_TOL:
        raise CutoffError(auto_cutoff(alpha), cutoff)
    return FockVector(c / math.sqrt(kept), kind="coherent", alpha=alpha)


def pascs_normalisation(alpha: complex) -> float:
    mu = abs(alpha) ** 2
    return mu * mu + 3.0 * mu + 1.0


def _create(c: np.ndarray) -> np.ndarray:
    out = np.zeros(len(c) + 1, dtype=complex)
    out[1:] = np.sqrt(np.arange(1, len(c) + 1)) * c
    return out


def _annihilate(c: np.ndarray) -> np.ndarray:
    return np.sqrt(np.arange(1, len(c))) * c[1:]


def pascs_fock(alpha: complex, cutoff: Optional[int] = None) -> tuple[FockVector, float]:
    """Photon-added-then-subtracted coherent state, a a^dag |alpha>, normalised.

    Returns the state and the numerically computed squared norm of
    ``a a^dag |alpha>``.
    """
    alpha = complex(alpha)
    if cutoff is None:
        cutoff = auto_cutoff(alpha) + 2
    if cutoff < 2:
        raise CutoffError(auto_cutoff(alpha) + 2, cutoff)
    raw = _coherent_raw(alpha, cutoff - 2)
    if np.vdot(raw, raw).real < 1.0 - TAIL_TOL:
        raise CutoffError(auto_cutoff(alpha) + 2, cutoff)
    # a^dag grows the support by one, a shrinks it back; pad to cutoff + 1.
    psi = _annihilate(_create(raw))
    psi = np.concatenate([psi, np.zeros(cutoff + 1 - len(psi), dtype=complex)])
    norm = np.vdot(psi, psi).real
    if abs(psi[-3]) ** 2 / norm >= TAIL_TOL:
        raise CutoffError(auto_cutoff(alpha) + 2, cutoff)
    return FockVector(psi / math.sqrt(norm), kind="pascs", alpha=alpha), float(norm)


def hermite_functions(n_max: int, y: np.ndarray) -> np.ndarray:
    """Oscillator eigenfunctions psi_0..psi_{n_max} at y (unit-variance-1/2 convention)."""
    y = np.asarray(y, dtype=float)
    out = np.zeros((n_max + 1,) + y.shape)
    out[0] = math.pi ** -0.25 * np.exp(-y * y / 2.0)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * y * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * y * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def quadrature_amplitude(state: FockVector, setting: Quadrature, grid) -> np.ndarray:
    v = np.asarray(grid, dtype=float)
    phis = hermite_functions(state.cutoff, _COORD_SCALE * v)
    return math.sqrt(_COORD_SCALE) * np.tensordot(state.rotated(setting), phis, axes=1)


def quadrature_pdf(state: FockVector, setting: Quadrature, grid) -> np.ndarray:
    v = np.asarray(grid, dtype=float)
    if v.ndim != 1 or np.any(np.diff(v) <= 0):
        raise ValueError("grid must be a strictly increasing 1-D sequence")
    return np.abs(quadrature_amplitude(state, setting, v)) ** 2


def coherent_quadrature_mean(alpha: complex, setting: Quadrature) -> float:
    alpha = complex(alpha)
    return alpha.real if setting == Quadrature.POSITION else alpha.imag


@dataclass(frozen=True, eq=False)
class QuadratureTable:
    """Tabulated density and CDF used for inverse-CDF sampling."""

    grid: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray

    def sample(self, u: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.cdf, u, side="right")
        idx = np.clip(idx, 1, len(self.cdf) - 1)
        lo, hi = self.cdf[idx - 1], self.cdf[idx]
        span = np.where(hi > lo, hi - lo, 1.0)
        frac = np.clip((u - lo) / span, 0.0, 1.0)
        return self.grid[idx - 1] + frac * (self.grid[idx] - self.grid[idx - 1])

    def cdf_at(self, v) -> np.ndarray:
        return np.interp(v, self.grid, self.cdf, left=0.0, right=1.0)


def build_table(state: FockVector, setting: Quadrature, points: int = TABLE_POINTS) -> QuadratureTable:
    mean, var = state.quadrature_moments(setting)
    half = TABLE_HALF_WIDTH_SD * math.sqrt(var)
    grid = np.linspace(mean - half, mean + half, points)
    pdf = quadrature_pdf(state, setting, grid)
    steps = 0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid)
    cdf = np.concatenate([[0.0], np.cumsum(steps)])
    cdf /= cdf[-1]
    for a in (grid, pdf, cdf):
        a.setflags(write=False)
    return QuadratureTable(grid, pdf, cdf)


@lru_cache(maxsize=256)
def pascs_table(alpha: complex, setting: Quadrature) -> QuadratureTable:
    state, _ = pascs_fock(alpha)
    return build_table(state, setting)


def _table_for(state: FockVector, setting: Quadrature) -> QuadratureTable:
    if state.kind == "pascs":
        return pascs_table(state.alpha, Quadrature(setting))
    return build_table(state, setting)


def sample_quadratures(state: FockVector, setting: Quadrature, rng: np.random.Generator,
                       size: int) -> np.ndarray:
    """Vectorised homodyne samples of one quadrature of ``state``."""
    if state.kind == "coherent":
        return rng.normal(coherent_quadrature_mean(state.alpha, setting), VACUUM_SD, size)
    return _table_for(state, setting).sample(rng.random(size))


def sample_quadrature(state: FockVector, setting: Quadrature, rng: np.random.Generator) -> float:
    return float(sample_quadratures(state, setting, rng, 1)[0])


def postselect_e4(value: float, x0: float = DEFAULT_X0) -> PostSelectOutcome:
    """Sign decision with a dead zone |value| <= x0. Bit 1 means the positive side."""
    if x0 < 0:
        raise ValueError("threshold must be non-negative")
    if abs(value) > x0:
        return PostSelectOutcome(True, int(value > 0), float(value))
    return PostSelectOutcome(False, None, float(value))


def postselect_b92(value: float, x0: float, setting: Quadrature) -> PostSelectOutcome:
    """x < -x0 gives 1, p < -x0 gives 0, anything else is inconclusive."""
    if x0 < 0:
        raise ValueError("threshold must be non-negative")
    if value < -x0:
        return PostSelectOutcome(True, 1 if setting == Quadrature.POSITION else 0, float(value))
    return PostSelectOutcome(False, None, float(value))


def postselect_e4_array(values: np.ndarray, x0: float) -> np.ndarray:
    """Vectorised postselect_e4: 1 / 0 for conclusive, -1 for inconclusive."""
    return np.where(np.abs(values) > x0, (values > 0).astype(np.int8), np.int8(-1)).astype(np.int8)


def postselect_b92_array(values: np.ndarray, x0: float, settings: np.ndarray) -> np.ndarray:
    bits = np.where(settings == Quadrature.POSITION, 1, 0).astype(np.int8)
    return np.where(values < -x0, bits, np.int8(-1)).astype(np.int8)
