"""Weighted low-rank approximation with probability box constraints.

The rank-k matrix ``D = S E`` minimizing the weighted chi-square against a
FrequencyMatrix is found by alternating exact minimization over S (with E
fixed) and over E (with S fixed). Each half step decouples into independent
k-dimensional quadratic programs, one per row or per column, with the
constraint ``0 <= D_ij <= 1`` on every cell of that row/column. The unit
column is handled exactly: E's first column is pinned to ``(1, 0, ..., 0)``
and every state row carries a leading 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import FrequencyMatrix, NumericalError, ValidationError
from .qp import active_set_qp, kkt_residual

log = logging.getLogger(__name__)

RIDGE = 1e-12
FEAS_TOL = 1e-12


@dataclass(frozen=True)
class FitOptions:
    rank: int
    max_iterations: int = 5000
    delta_chi2_tol: float = 1e-6
    restarts: int = 5
    qp_tolerance: float = 1e-10
    init_strategy: str = "svd"
    perturbation: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValidationError("rank must be >= 1")
        if self.delta_chi2_tol <= 0 or self.qp_tolerance <= 0:
            raise ValidationError("tolerances must be positive")
        if self.restarts < 1 or self.max_iterations < 1:
            raise ValidationError("need at least one restart and one iteration")
        if self.init_strategy not in ("svd", "random"):
            raise ValidationError(f"unknown init strategy {self.init_strategy!r}")


@dataclass
class FitResult:
    S: np.ndarray
    E: np.ndarray
    chi2: float
    iterations: int
    converged: bool
    per_restart_chi2: list = field(default_factory=list)
    chi2_trace: list = field(default_factory=list)
    underdetermined_rows: tuple = ()
    underdetermined_cols: tuple = ()
    best_restart: int = 0

    @property
    def D(self) -> np.ndarray:
        return self.S @ self.E

    @property
    def rank(self) -> int:
        return self.S.shape[1]


def _data(F: FrequencyMatrix):
    W = F.weights()
    Fv = np.where(F.mask, F.values, 0.0)
    Fv = np.nan_to_num(Fv)
    return Fv, W


def chi2(F: FrequencyMatrix, D, atol: float = 0.0) -> float:
    """Weighted chi-square over measured, non-exact cells.

    Raises
    ------
    ValidationError
        If ``D`` does not reproduce an exact column of ``F`` (within ``atol``);
        the statistic is undefined in that case.
    """
    D = np.asarray(D, dtype=float)
    if D.shape != F.shape:
        raise ValidationError(f"shape mismatch {D.shape} vs {F.shape}")
    for c in F.exact_cols:
        rows = F.mask[:, c]
        if np.any(np.abs(D[rows, c] - F.values[rows, c]) > atol):
            raise ValidationError(f"exact column {c} not reproduced; chi-square undefined")
    Fv, W = _data(F)
    r = np.where(W > 0, Fv - D, 0.0)
    return float(np.sum(W * r * r))


# ---------------------------------------------------------------------------
# batched half steps

def _ridge(H, counts, dim):
    """Add a tiny ridge to Hessians of under-determined subproblems."""
    under = counts < dim
    if under.any():
        diag = np.einsum("iaa->ia", H)
        scale = np.maximum(diag.max(axis=1), 1.0)
        H[under] += (RIDGE * scale[under])[:, None, None] * np.eye(dim)
    return under


def _batched_qp(H, g, G, h, X_prev, tol):
    """Solve independent QPs sharing constraints ``G x <= h``.

    The unconstrained minimizer is accepted when feasible; otherwise the
    active-set method runs from the (feasible) previous iterate.
    """
    dim = H.shape[1]
    X = np.linalg.solve(H, -g[..., None])[..., 0]
    viol = X @ G.T - h
    bad = np.flatnonzero(viol.max(axis=1) > FEAS_TOL)
    for i in bad:
        X[i] = active_set_qp(H[i], g[i], G, h, X_prev[i], tol=tol).x
    return X, bad.size


def _s_step(Fv, W, E, S_prev, tol):
    m = Fv.shape[0]
    k = E.shape[0]
    if k == 1:
        return np.ones((m, 1)), 0, np.zeros(m, bool)
    E0 = E[0, 1:]
    Eb = E[1:, 1:]                       # (k-1, n-1)
    Wr = W[:, 1:]
    R = Fv[:, 1:] - E0                   # residual target for the Bloch part
    H = np.einsum("aj,ij,bj->iab", Eb, Wr, Eb)
    g = -np.einsum("aj,ij->ia", Eb, Wr * R)
    counts = (Wr > 0).sum(axis=1)
    under = _ridge(H, counts, k - 1)
    G = np.vstack([Eb.T, -Eb.T])
    h = np.concatenate([1 - E0, E0])
    T, nbad = _batched_qp(H, g, G, h, S_prev[:, 1:], tol)
    return np.column_stack([np.ones(m), T]), nbad, under


def _e_step(Fv, W, S, E_prev, tol):
    k = S.shape[1]
    Wc = W[:, 1:].T                      # (n-1, m)
    Fc = Fv[:, 1:].T
    H = np.einsum("ia,ji,ib->jab", S, Wc, S)
    g = -np.einsum("ia,ji->ja", S, Wc * Fc)
    counts = (Wc > 0).sum(axis=1)
    under = _ridge(H, counts, k)
    G = np.vstack([S, -S])
    h = np.concatenate([np.ones(S.shape[0]), np.zeros(S.shape[0])])
    Ec, nbad = _batched_qp(H, g, G, h, E_prev[:, 1:].T, tol)
    E = np.empty_like(E_prev)
    E[:, 0] = 0.0
    E[0, 0] = 1.0
    E[:, 1:] = Ec.T
    return E, nbad, under


# ---------------------------------------------------------------------------
# single-row / single-column API

def solve_row_qp(E, f_row, sigma_row, mask_row, exact_cols=(0,), s_start=None,
                 tol: float = 1e-10) -> np.ndarray:
    """Best state vector for one preparation with the effects ``E`` fixed.

    Minimizes ``sum_j (s.e_j - f_j)**2 / sigma_j**2`` over measured cells subject
    to ``0 <= s.e_j <= 1`` for every column and ``s.u = 1``. Column 0 of ``E``
    must be the unit effect ``(1, 0, ..., 0)``.
    """
    E = np.asarray(E, float)
    k, n = E.shape
    if not np.array_equal(E[:, 0], np.eye(k)[0]):
        raise ValidationError("column 0 of E must be the unit effect")
    f = np.nan_to_num(np.asarray(f_row, float))
    mask = np.asarray(mask_row, bool).copy()
    mask[list(exact_cols)] = False
    w = np.zeros(n)
    w[mask] = 1.0 / np.asarray(sigma_row, float)[mask] ** 2
    prev = np.zeros((1, k)) if s_start is None else np.atleast_2d(s_start)
    S, _, _ = _s_step(f[None, :], w[None, :], E, prev, tol)
    return S[0]


def solve_col_qp(S, f_col, sigma_col, mask_col, e_start=None, tol: float = 1e-10) -> np.ndarray:
    """Best effect vector for one measurement with the states ``S`` fixed,
    subject to ``0 <= s_i.e <= 1`` for every state."""
    S = np.asarray(S, float)
    m, k = S.shape
    f = np.nan_to_num(np.asarray(f_col, float))
    mask = np.asarray(mask_col, bool)
    w = np.zeros(m)
    w[mask] = 1.0 / np.asarray(sigma_col, float)[mask] ** 2
    Fv = np.column_stack([np.ones(m), f])
    W = np.column_stack([np.zeros(m), w])
    E_prev = np.zeros((k, 2))
    E_prev[0, 0] = 1.0
    if e_start is not None:
        E_prev[:, 1] = e_start
    else:
        # a constant effect (c, 0, ...) with c in [0, 1] is feasible for normalized states
        if not np.allclose(S[:, 0], 1.0):
            raise ValidationError("provide e_start when states are not normalized")
        E_prev[0, 1] = 0.5
    E, _, _ = _e_step(Fv, W, S, E_prev, tol)
    return E[:, 1]


# ---------------------------------------------------------------------------
# initialization and the alternating loop

def _initial_effects(Fv, F: FrequencyMatrix, k, rng, perturb):
    m, n = Fv.shape
    imp = np.where(F.mask, Fv, 0.5)[:, 1:]
    mu = imp.mean(axis=0)
    E = np.zeros((k, n))
    E[0, 0] = 1.0
    E[0, 1:] = mu
    if k > 1:
        C = imp - mu
        _, sv, Vt = np.linalg.svd(C, full_matrices=False)
        r = min(k - 1, sv.size)
        E[1:1 + r, 1:] = np.sqrt(sv[:r])[:, None] * Vt[:r]
        if perturb > 0:
            rms = np.sqrt(np.mean(E[1:, 1:] ** 2, axis=1, keepdims=True))
            rms = np.where(rms > 0, rms, 1.0)
            E[1:, 1:] += perturb * rms * rng.uniform(-1, 1, size=(k - 1, n - 1))
    return E


def _fit_once(Fv, W, E, opts: FitOptions):
    m = Fv.shape[0]
    k = E.shape[0]
    S = np.zeros((m, k))
    S[:, 0] = 1.0
    trace = []
    prev = np.inf
    converged = False
    it = 0
    under_r = under_c = np.zeros(0, bool)
    for it in range(1, opts.max_iterations + 1):
        S, _, under_r = _s_step(Fv, W, E, S, opts.qp_tolerance)
        c_mid = float(np.sum(W * (Fv - S @ E) ** 2))
        E, _, under_c = _e_step(Fv, W, S, E, opts.qp_tolerance)
        c = float(np.sum(W * (Fv - S @ E) ** 2))
        slack = 1e-9 * max(1.0, prev if np.isfinite(prev) else c)
        if c_mid > prev + slack or c > c_mid + slack:
            raise NumericalError(f"chi-square increased during alternation at iteration {it}")
        trace.append(c)
        if prev - c < opts.delta_chi2_tol:
            converged = True
            break
        prev = c
    return S, E, trace, converged, it, under_r, under_c


def fit_rank_k(F: FrequencyMatrix, opts: FitOptions) -> FitResult:
    """Rank-k box-constrained weighted fit of a frequency matrix.

    Runs ``opts.restarts`` alternations (the first from the SVD start, the
    others from perturbed starts) and keeps the lowest chi-square; ties
    within 1e-9 go to the earliest restart.
    """
    if F.exact_cols != (0,):
        raise ValidationError("the fit expects exactly one exact column, the unit column 0")
    m, n = F.shape
    k = opts.rank
    if k > min(m, n):
        raise ValidationError(f"rank {k} exceeds min(m, n) = {min(m, n)}")
    if not np.all(F.values[:, 0] == 1.0):
        raise ValidationError("column 0 must be the exact unit column of ones")
    Fv, W = _data(F)
    rng = np.random.default_rng(opts.seed)
    best = None
    chis = []
    for r in range(opts.restarts):
        if opts.init_strategy == "random":
            E0 = _initial_effects(Fv, F, k, rng, 0.0)
            E0[1:, 1:] = rng.uniform(-0.5, 0.5, size=E0[1:, 1:].shape)
        else:
            E0 = _initial_effects(Fv, F, k, rng, 0.0 if r == 0 else opts.perturbation)
        S, E, trace, conv, its, ur, uc = _fit_once(Fv, W, E0, opts)
        c = trace[-1]
        chis.append(c)
        log.debug("rank %d restart %d: chi2=%.6f after %d iterations", k, r, c, its)
        if best is None or c < best.chi2 - 1e-9:
            best = FitResult(S, E, c, its, conv, chi2_trace=trace,
                             underdetermined_rows=tuple(np.flatnonzero(ur).tolist()),
                             underdetermined_cols=tuple((np.flatnonzero(uc) + 1).tolist()),
                             best_restart=r)
    best.per_restart_chi2 = chis
    return best


def fit_feasibility(result: FitResult, tol: float = 1e-9) -> float:
    """Largest violation of ``0 <= D <= 1`` in a fit (0 when feasible)."""
    D = result.D
    return float(max(0.0, -D.min(), D.max() - 1.0)) if D.size else 0.0


__all__ = ["FitOptions", "FitResult", "chi2", "fit_rank_k", "solve_row_qp",
           "solve_col_qp", "fit_feasibility", "kkt_residual"]
