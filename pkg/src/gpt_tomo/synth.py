"""Synthetic noisy-qubit experiments: ground truth models, designs and counts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (FrequencyMatrix, GptEffectVector, GptModel, GptStateVector,
                   ProbabilityMatrix, ValidationError)

GOLDEN = (1 + np.sqrt(5)) / 2


@dataclass(frozen=True)
class ExperimentDesign:
    """Which preparation/measurement pairs are implemented.

    In fiducial mode the first ``f`` rows are fiducial preparations and
    columns ``1..f`` fiducial measurements (column 0 is the unit effect).
    Only cells in a fiducial row or a fiducial/unit column are measured.
    """

    m: int
    n: int
    mode: str = "full"
    f: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "fiducial"):
            raise ValidationError(f"unknown design mode {self.mode!r}")
        if self.m < 1 or self.n < 2:
            raise ValidationError("need m >= 1 and n >= 2 (unit column plus one measurement)")
        if self.mode == "fiducial" and not (1 <= self.f <= min(self.m, self.n - 1)):
            raise ValidationError(f"fiducial set size {self.f} incompatible with m={self.m}, n={self.n}")

    @classmethod
    def full(cls, m, n):
        return cls(m, n, "full")

    @classmethod
    def fiducial(cls, m, n, f=6):
        return cls(m, n, "fiducial", f)

    @property
    def mask(self) -> np.ndarray:
        if self.mode == "full":
            return np.ones((self.m, self.n), dtype=bool)
        mk = np.zeros((self.m, self.n), dtype=bool)
        mk[: self.f, :] = True
        mk[:, : self.f + 1] = True
        return mk

    @property
    def n_configurations(self) -> int:
        """Number of implemented configurations, excluding the implicit unit column."""
        return int(self.mask[:, 1:].sum())


@dataclass(frozen=True)
class GroundTruth:
    model: GptModel
    w: float
    wp: float
    counts_per_cell: float = 1.0

    def __post_init__(self):
        if not (0 <= self.w <= 1 and 0 <= self.wp <= 1):
            raise ValidationError("depolarization parameters must lie in [0, 1]")
        if self.counts_per_cell < 1:
            raise ValidationError("counts_per_cell must be >= 1")


def spiral_points(N: int) -> np.ndarray:
    """Approximately uniform points on the unit sphere along a generalized spiral.

    The spiral starts at the south pole and ends at the north pole.

    Returns
    -------
    (N, 3) array of unit vectors.
    """
    if N < 2:
        raise ValidationError("spiral needs at least 2 points")
    k = np.arange(1, N + 1)
    h = -1 + 2 * (k - 1) / (N - 1)
    theta = np.arccos(h)
    phi = np.zeros(N)
    for i in range(1, N - 1):
        phi[i] = (phi[i - 1] + 3.6 / np.sqrt(N * (1 - h[i] ** 2))) % (2 * np.pi)
    pts = np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), h])
    pts[0] = (0.0, 0.0, -1.0)
    pts[-1] = (0.0, 0.0, 1.0)
    return pts


def circle_points(N: int) -> np.ndarray:
    """N equally spaced unit vectors on the great circle in the x-z plane."""
    t = 2 * np.pi * np.arange(N) / N
    return np.column_stack([np.sin(t), np.zeros(N), -np.cos(t)])


def _unit3(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape != (3,) or abs(np.linalg.norm(n) - 1) > 1e-9:
        raise ValidationError(f"expected a unit 3-vector, got {n!r}")
    return n


def bloch_state(n) -> GptStateVector:
    r = np.asarray(n, dtype=float)
    return GptStateVector(np.concatenate([[1.0], r]))


def projective_effect(n) -> GptEffectVector:
    """Outcome-0 effect of the projective measurement along ``n``: ``(1/2, n/2)``."""
    n = _unit3(n)
    return GptEffectVector(np.concatenate([[0.5], n / 2]))


def _check_w(w):
    if not 0 <= w <= 1:
        raise ValidationError(f"depolarization parameter {w} outside [0, 1]")


def depolarize_state(s: GptStateVector, w: float) -> GptStateVector:
    _check_w(w)
    c = np.array(s.components)
    c[1:] *= w
    return GptStateVector(c)


def depolarize_effect(e: GptEffectVector, wp: float) -> GptEffectVector:
    _check_w(wp)
    c = np.array(e.components)
    c[1:] *= wp
    return GptEffectVector(c)


def octahedron_points() -> np.ndarray:
    return np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)


def icosahedron_half() -> np.ndarray:
    """One vertex from each antipodal pair of a regular icosahedron (unit norm)."""
    g = GOLDEN
    v = np.array([[0, 1, g], [0, -1, g], [1, g, 0], [-1, g, 0], [g, 0, 1], [g, 0, -1]], float)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def fiducial_states() -> list:
    """The +1 and -1 eigenstates of the three Pauli operators."""
    return [bloch_state(r) for r in octahedron_points()]


def fiducial_effects() -> list:
    return [projective_effect(n) for n in icosahedron_half()]


def qubit_model(state_dirs, effect_dirs, w=1.0, wp=1.0) -> GptModel:
    """Depolarized qubit model with a leading unit-effect column."""
    _check_w(w)
    _check_w(wp)
    state_dirs = np.asarray(state_dirs, float)
    effect_dirs = np.asarray(effect_dirs, float)
    S = np.column_stack([np.ones(len(state_dirs)), w * state_dirs])
    E = np.column_stack([[1.0, 0, 0, 0], np.vstack([np.full(len(effect_dirs), 0.5),
                                                    wp * effect_dirs.T / 2])])
    return GptModel(S, E)


def build_ground_truth(m: int, n: int, w: float, wp: float,
                       design: Optional[ExperimentDesign] = None,
                       counts_per_cell: float = 1.0,
                       state_dirs=None, effect_dirs=None):
    """Assemble a depolarized-qubit ground truth and its probability matrix.

    States default to ``spiral_points(m)`` and effects to
    ``spiral_points(n - 1)``; in a fiducial design the first ``f`` states are
    the Pauli eigenstates and the first ``f`` effects the icosahedron set.

    Returns
    -------
    (GroundTruth, ProbabilityMatrix)
    """
    design = design or ExperimentDesign.full(m, n)
    if (design.m, design.n) != (m, n):
        raise ValidationError(f"design is {design.m}x{design.n}, expected {m}x{n}")
    if state_dirs is None:
        if design.mode == "fiducial":
            state_dirs = np.vstack([octahedron_points()[: design.f], spiral_points(m - design.f)])
        else:
            state_dirs = spiral_points(m)
    if effect_dirs is None:
        if design.mode == "fiducial":
            effect_dirs = np.vstack([icosahedron_half()[: design.f],
                                     spiral_points(n - 1 - design.f)])
        else:
            effect_dirs = spiral_points(n - 1)
    state_dirs = np.asarray(state_dirs, float)
    effect_dirs = np.asarray(effect_dirs, float)
    if state_dirs.shape != (m, 3) or effect_dirs.shape != (n - 1, 3):
        raise ValidationError("direction arrays do not match m and n - 1")
    model = qubit_model(state_dirs, effect_dirs, w, wp)
    D = np.clip(model.probabilities(), 0.0, 1.0)
    D[:, 0] = 1.0
    truth = GroundTruth(model, float(w), float(wp), counts_per_cell)
    return truth, ProbabilityMatrix(D, rank_bound=4)


def sample_counts(D, design: ExperimentDesign, N: float, seed=None, rng=None,
                  count_model: str = "poisson"):
    """Draw outcome-0 and outcome-1 counts for every measured non-unit cell.

    Cells whose total count is zero are redrawn. Unmeasured cells and the
    unit column hold zero counts.

    Returns
    -------
    n0, n1 : (m, n) int arrays
    """
    if N < 1:
        raise ValidationError("expected counts per cell must be >= 1")
    P = D.entries if isinstance(D, ProbabilityMatrix) else np.asarray(D, float)
    rng = rng if rng is not None else np.random.default_rng(seed)
    mk = design.mask.copy()
    mk[:, 0] = False
    p = P[mk]
    n0 = np.zeros(p.size, dtype=np.int64)
    n1 = np.zeros(p.size, dtype=np.int64)
    todo = np.arange(p.size)
    while todo.size:
        if count_model == "poisson":
            n0[todo] = rng.poisson(N * p[todo])
            n1[todo] = rng.poisson(N * (1 - p[todo]))
        elif count_model == "binomial":
            n0[todo] = rng.binomial(int(round(N)), p[todo])
            n1[todo] = int(round(N)) - n0[todo]
        else:
            raise ValidationError(f"unknown count model {count_model!r}")
        todo = todo[(n0[todo] + n1[todo]) == 0]
    out0 = np.zeros(P.shape, dtype=np.int64)
    out1 = np.zeros(P.shape, dtype=np.int64)
    out0[mk] = n0
    out1[mk] = n1
    return out0, out1


def frequencies_from_counts(n0, n1, mask=None) -> FrequencyMatrix:
    """Convert per-cell counts into a FrequencyMatrix with Poisson-ratio uncertainties.

    ``sigma**2 = n0 n1 / (n0 + n1)**3``; when either count is zero the
    uncertainty is floored at ``1 / (n0 + n1 + 2)``. Column 0 is the exact
    unit column.
    """
    n0 = np.asarray(n0, dtype=float)
    n1 = np.asarray(n1, dtype=float)
    if mask is None:
        mask = (n0 + n1) > 0
    mask = np.array(mask, dtype=bool)
    mask[:, 0] = True
    tot = n0 + n1
    data = mask.copy()
    data[:, 0] = False
    if np.any(tot[data] <= 0):
        raise ValidationError("measured cells need a positive total count")
    f = np.full(n0.shape, np.nan)
    sig = np.zeros(n0.shape)
    t = tot[data]
    a, b = n0[data], n1[data]
    f[data] = a / t
    s = np.sqrt(a * b / t ** 3)
    floor = 1.0 / (t + 2)
    s = np.where((a == 0) | (b == 0), floor, s)
    sig[data] = s
    f[:, 0] = 1.0
    return FrequencyMatrix(f, sig, mask, (0,))


def sample_frequency_matrix(D, design: ExperimentDesign, N: float, seed=None,
                            count_model: str = "poisson") -> FrequencyMatrix:
    n0, n1 = sample_counts(D, design, N, seed=seed, count_model=count_model)
    return frequencies_from_counts(n0, n1, design.mask)
