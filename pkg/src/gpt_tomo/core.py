"""Domain types and elementary GPT algebra.

Conventions
-----------
States are real vectors ``s = (1, s_1, ..., s_{k-1})``; effects are real
vectors ``e`` and the outcome probability is the inner product ``s . e``.
The unit effect is ``u = (1, 0, ..., 0)``.

Qubit effects use the *Pauli* convention: the projector onto the Bloch
direction ``n`` is represented by ``(1/2, n/2)`` rather than ``(1, n)``.
This differs from the usual quantum-information convention, in which the
effect vector would carry the full Bloch vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

#: Slack allowed on fitted probabilities before they count as out of range.
PROB_TOL = 1e-9


class GptError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(GptError, ValueError):
    """Input data or a model violates a structural requirement."""


class NumericalError(GptError, ArithmeticError):
    """A numerical routine failed (non-convergence, degeneracy, ...)."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def unit_effect(k: int) -> np.ndarray:
    u = np.zeros(k)
    u[0] = 1.0
    return u


@dataclass(frozen=True)
class GptStateVector:
    components: np.ndarray

    def __post_init__(self):
        c = _frozen(self.components)
        if c.ndim != 1 or c.size < 2:
            raise ValidationError("a state vector needs at least 2 components")
        if c[0] != 1.0:
            raise ValidationError(f"state normalization component is {c[0]!r}, expected 1")
        object.__setattr__(self, "components", c)

    @property
    def bloch(self) -> np.ndarray:
        return self.components[1:]

    def __len__(self):
        return self.components.size


@dataclass(frozen=True)
class GptEffectVector:
    components: np.ndarray

    def __post_init__(self):
        c = _frozen(self.components)
        if c.ndim != 1:
            raise ValidationError("an effect vector must be one-dimensional")
        object.__setattr__(self, "components", c)

    @property
    def bloch(self) -> np.ndarray:
        return self.components[1:]

    def __len__(self):
        return self.components.size


def _components(v) -> np.ndarray:
    if isinstance(v, (GptStateVector, GptEffectVector)):
        return v.components
    return np.asarray(v, dtype=float)


def probability(s, e) -> float:
    """Outcome probability ``s . e`` (not clamped)."""
    s, e = _components(s), _components(e)
    if s.shape != e.shape:
        raise ValidationError(f"length mismatch: state {s.shape} vs effect {e.shape}")
    return float(s @ e)


def complement_effect(e):
    """Return ``u - e``, the effect of the other outcome."""
    c = _components(e)
    out = -c
    out[0] += 1.0
    if isinstance(e, GptEffectVector):
        return GptEffectVector(out)
    return out


@dataclass(frozen=True)
class ProbabilityMatrix:
    """An m x n matrix of outcome probabilities with a unit first column."""

    entries: np.ndarray
    rank_bound: int

    def __post_init__(self):
        d = _frozen(self.entries)
        if d.ndim != 2:
            raise ValidationError("probability matrix must be 2-D")
        if np.any(d < 0) or np.any(d > 1):
            raise ValidationError("probability matrix entries must lie in [0, 1]")
        if not np.all(d[:, 0] == 1.0):
            raise ValidationError("first column must be the unit-effect column of ones")
        object.__setattr__(self, "entries", d)

    @property
    def shape(self):
        return self.entries.shape

    def numerical_rank(self, rtol: float = 1e-8) -> int:
        sv = np.linalg.svd(self.entries, compute_uv=False)
        return int(np.sum(sv > rtol * sv[0]))


@dataclass(frozen=True)
class FrequencyMatrix:
    """Measured outcome-0 frequencies.

    Attributes
    ----------
    values : (m, n) array
        Relative frequencies ``f(0|P_i, M_j)``; entries of unmeasured cells
        are ignored.
    sigmas : (m, n) array
        Standard uncertainties of the frequencies.
    mask : (m, n) bool array
        True where the cell was measured.
    exact_cols : tuple of int
        Columns known exactly (the unit column).
    """

    values: np.ndarray
    sigmas: np.ndarray
    mask: np.ndarray
    exact_cols: tuple = (0,)

    def __post_init__(self):
        v = _frozen(self.values)
        s = _frozen(self.sigmas)
        mk = _frozen(self.mask, dtype=bool)
        if not (v.shape == s.shape == mk.shape) or v.ndim != 2:
            raise ValidationError("values, sigmas and mask must share one 2-D shape")
        ex = tuple(sorted(int(c) for c in self.exact_cols))
        meas = v[mk]
        if np.any(meas < 0) or np.any(meas > 1):
            raise ValidationError("measured frequencies must lie in [0, 1]")
        inexact = mk.copy()
        inexact[:, list(ex)] = False
        if np.any(~(s[inexact] > 0)):
            raise ValidationError("measured, non-exact cells need sigma > 0")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "sigmas", s)
        object.__setattr__(self, "mask", mk)
        object.__setattr__(self, "exact_cols", ex)

    @property
    def shape(self):
        return self.values.shape

    def weights(self) -> np.ndarray:
        """Per-cell chi-square weights ``1/sigma**2``; zero where unmeasured or exact."""
        w = np.zeros(self.shape)
        fit = self.fit_mask()
        w[fit] = 1.0 / self.sigmas[fit] ** 2
        return w

    def fit_mask(self) -> np.ndarray:
        """Cells entering the chi-square sum (measured and not exact)."""
        fm = self.mask.copy()
        fm[:, list(self.exact_cols)] = False
        return fm

    def with_mask(self, mask) -> "FrequencyMatrix":
        return FrequencyMatrix(self.values, self.sigmas, np.asarray(mask, bool) & self.mask,
                               self.exact_cols)


@dataclass(frozen=True)
class GptModel:
    """Factorization ``D = S E`` with states as rows of S and effects as columns of E."""

    states: np.ndarray
    effects: np.ndarray

    def __post_init__(self):
        S = _frozen(self.states)
        E = _frozen(self.effects)
        if S.ndim != 2 or E.ndim != 2 or S.shape[1] != E.shape[0]:
            raise ValidationError(f"incompatible shapes S{S.shape}, E{E.shape}")
        object.__setattr__(self, "states", S)
        object.__setattr__(self, "effects", E)

    @property
    def k(self) -> int:
        return self.states.shape[1]

    def probabilities(self) -> np.ndarray:
        return self.states @ self.effects


@dataclass(frozen=True)
class ValidationReport:
    out_of_range: tuple
    states_normalized: bool
    unit_column_canonical: bool

    @property
    def valid(self) -> bool:
        return not self.out_of_range and self.states_normalized and self.unit_column_canonical


def validate_model(model: GptModel, tol: float = PROB_TOL) -> ValidationReport:
    """Check a model for probabilities outside ``[-tol, 1 + tol]`` and the unit conventions."""
    D = model.probabilities()
    bad = np.argwhere((D < -tol) | (D > 1 + tol))
    S, E = model.states, model.effects
    return ValidationReport(
        out_of_range=tuple((int(i), int(j)) for i, j in bad),
        states_normalized=bool(np.all(S[:, 0] == 1.0)),
        unit_column_canonical=bool(np.array_equal(E[:, 0], unit_effect(model.k))),
    )


@dataclass(frozen=True)
class Polytope:
    """Convex polytope in V- and/or H-representation.

    ``halfspaces`` is an ``(h, dim + 1)`` array whose rows ``[a, b]`` encode
    ``a . x <= b``.
    """

    dim: int
    vertices: Optional[np.ndarray] = None
    halfspaces: Optional[np.ndarray] = None
    role: str = field(default="", compare=False)

    def __post_init__(self):
        if self.vertices is None and self.halfspaces is None:
            raise ValidationError("a polytope needs vertices or halfspaces")
        if self.vertices is not None:
            V = _frozen(self.vertices).reshape(-1, self.dim)
            object.__setattr__(self, "vertices", V)
        if self.halfspaces is not None:
            H = _frozen(self.halfspaces).reshape(-1, self.dim + 1)
            object.__setattr__(self, "halfspaces", H)

    @property
    def A(self) -> np.ndarray:
        return self.halfspaces[:, :-1]

    @property
    def b(self) -> np.ndarray:
        return self.halfspaces[:, -1]
