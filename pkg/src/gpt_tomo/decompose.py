"""Canonical factorization of a fitted probability matrix into GPT states and effects."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .core import GptModel, NumericalError, ProbabilityMatrix, ValidationError

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class Decomposition:
    model: GptModel
    rank: int
    requested_rank: int
    singular_values: np.ndarray

    @property
    def truncated(self) -> bool:
        return self.rank < self.requested_rank


def _entries(D) -> np.ndarray:
    if isinstance(D, ProbabilityMatrix):
        return D.entries
    return np.asarray(D, dtype=float)


def decompose(D, k: int, unit_tol: float = 1e-9) -> Decomposition:
    """Factor ``D = S E`` with a column of ones leading S and ``u`` leading E.

    QR-factorize ``D``, rescale so the first column of Q is all ones, then
    take the SVD of the remainder ``Q1 R1`` and split its leading ``k - 1``
    singular values evenly between S and E. Each right singular vector is
    signed so that its first non-negligible component is positive.
    """
    D = _entries(D)
    if D.ndim != 2 or D.shape[1] < 1:
        raise ValidationError("D must be a 2-D matrix with at least one column")
    if np.abs(D[:, 0] - 1.0).max() > unit_tol:
        raise ValidationError("first column of D must be all ones")
    if k < 1:
        raise ValidationError("rank must be >= 1")
    m, n = D.shape
    Q, R = qr(D, mode="economic")
    c = Q[0, 0]
    if abs(c) < 1e-12 or np.abs(Q[:, 0] - c).max() > 1e-9:
        raise NumericalError("first QR column is not a constant vector")
    Qp, Rp = Q / c, R * c
    Q1, R0, R1 = Qp[:, 1:], Rp[0], Rp[1:]
    rest = Q1 @ R1
    if rest.size:
        U, sv, Vt = np.linalg.svd(rest, full_matrices=False)
    else:
        U, sv, Vt = np.zeros((m, 0)), np.zeros(0), np.zeros((0, n))
    r = min(k - 1, sv.size)
    if r > 0:
        keep = sv[:r] > RANK_RTOL * sv[0]
        r = int(keep.sum())
    if r < k - 1:
        log.warning("rank deficiency: keeping %d of %d components", r + 1, k)
    U, s, Vt = U[:, :r], sv[:r], Vt[:r].copy()
    for i in range(r):
        v = Vt[i]
        big = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())
        if v[big[0]] < 0:
            Vt[i] = -v
            U[:, i] = -U[:, i]
    root = np.sqrt(s)
    S = np.column_stack([np.ones(m), U * root])
    E = np.vstack([R0, root[:, None] * Vt])
    E[1:, 0] = 0.0
    E[0, 0] = 1.0
    return Decomposition(GptModel(S, E), r + 1, k, sv)


def canonical_decompose(D, k: int) -> GptModel:
    return decompose(D, k).model


def extend_with_complements(D) -> np.ndarray:
    """``[D | 1 - D]``: outcome-0 and outcome-1 probabilities side by side."""
    D = _entries(D)
    return np.hstack([D, 1.0 - D])


def extended_decompose(D, k: int) -> GptModel:
    """Decompose ``[D | 1 - D]`` so the effect list is closed under complement.

    Column ``n + j`` of the returned effects equals ``u - e_j``; column ``n``
    is the zero effect.
    """
    return decompose(extend_with_complements(D), k).model


def reconstruction_error(model: GptModel, D) -> float:
    return float(np.abs(model.probabilities() - _entries(D)).max())
