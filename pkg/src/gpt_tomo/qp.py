"""Primal active-set solver for small dense convex quadratic programs.

Solves::

    minimize    1/2 x'Hx + g'x
    subject to  Gx <= h

starting from a feasible point. Intended for the k-dimensional row and
column subproblems of the low-rank fit (k <= 10, a few hundred
constraints, most of them inactive).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NumericalError


@dataclass
class QPResult:
    x: np.ndarray
    iterations: int
    kkt_residual: float
    active: list


def kkt_residual(H, g, G, h, x, lam_tol=0.0):
    """Stationarity/feasibility residual of ``x`` using least-squares multipliers
    on the constraints active at ``x``."""
    grad = H @ x + g
    slack = h - G @ x
    scale = max(1.0, np.abs(h).max(initial=0.0))
    act = np.flatnonzero(slack <= 1e-9 * scale)
    primal = max(0.0, -slack.min(initial=0.0))
    if act.size:
        lam, *_ = np.linalg.lstsq(G[act].T, -grad, rcond=None)
        lam = np.maximum(lam, 0.0)
        stat = grad + G[act].T @ lam
    else:
        stat = grad
    gscale = max(1.0, np.abs(g).max(initial=0.0), np.abs(H).max(initial=0.0))
    return max(primal, np.abs(stat).max(initial=0.0) / gscale)


def active_set_qp(H, g, G, h, x0, tol=1e-10, max_iter=None) -> QPResult:
    """Minimize ``1/2 x'Hx + g'x`` subject to ``Gx <= h`` from feasible ``x0``.

    ``H`` must be positive definite (add a ridge beforehand otherwise).
    """
    H = np.asarray(H, float)
    g = np.asarray(g, float)
    G = np.asarray(G, float)
    h = np.asarray(h, float)
    x = np.array(x0, dtype=float)
    d = x.size
    nc = h.size
    if max_iter is None:
        max_iter = 10 * (nc + d) + 50
    scale = max(1.0, np.abs(h).max(initial=0.0))
    if nc and (G @ x - h).max() > 1e-7 * scale:
        raise NumericalError("active-set start point is infeasible")
    work: list = []
    in_work = np.zeros(nc, dtype=bool)
    xnorm_tol = tol * max(1.0, np.abs(x).max(initial=0.0))
    # after an unblocked step x already minimizes on the working set; the
    # next step is round-off and only the multipliers matter
    at_min = False
    degenerate = False
    for it in range(1, max_iter + 1):
        grad = H @ x + g
        if len(work) >= d:
            # a full working set pins x; only multipliers are needed
            p = np.zeros(d)
            lam = np.linalg.lstsq(G[work].T, -grad, rcond=None)[0]
        elif work:
            A = G[work]
            na = len(work)
            K = np.zeros((d + na, d + na))
            K[:d, :d] = H
            K[:d, d:] = A.T
            K[d:, :d] = A
            rhs = np.concatenate([-grad, np.zeros(na)])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            p, lam = sol[:d], sol[d:]
        else:
            p = np.linalg.solve(H, -grad)
            lam = np.zeros(0)
        if at_min or len(work) >= d or np.abs(p).max(initial=0.0) <= xnorm_tol:
            lam_tol = tol * max(1.0, np.abs(grad).max(initial=0.0))
            if not work or lam.min() >= -lam_tol:
                return QPResult(x, it, kkt_residual(H, g, G, h, x), list(work))
            if degenerate:
                # Bland: drop the lowest-index constraint with a negative multiplier
                neg = [i for i, l in enumerate(lam) if l < -lam_tol]
                pos = min(neg, key=lambda i: work[i])
            else:
                pos = int(np.argmin(lam))
            drop = work.pop(pos)
            in_work[drop] = False
            at_min = False
            continue
        Gp = G @ p
        slack = np.maximum(h - G @ x, 0.0)
        cand = (Gp > 1e-14 * max(1.0, np.abs(p).max())) & ~in_work
        alpha = 1.0
        block = -1
        if cand.any():
            idx = np.flatnonzero(cand)
            ratios = slack[idx] / Gp[idx]
            rmin = ratios.min()
            if rmin < 1.0:
                alpha = float(rmin)
                # lowest index among ties keeps degenerate vertices from cycling
                block = int(idx[np.flatnonzero(ratios <= rmin + 1e-15)[0]])
        x = x + alpha * p
        at_min = block < 0
        degenerate = block >= 0 and alpha <= 1e-14
        if block >= 0:
            work.append(block)
            in_work[block] = True
    raise NumericalError(f"active-set QP did not converge in {max_iter} iterations")
