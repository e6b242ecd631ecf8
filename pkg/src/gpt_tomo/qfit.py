"""Quantum-consistency test: how far must the realized vectors be shrunk before
an origin-centered ellipsoid (a linearly transformed qubit ball) fits between
the realized and the consistent state spaces?

The ellipsoid ``{x : x'Qx <= 1}`` contains a point ``v`` iff ``v'Qv <= 1`` and
lies inside the halfspace ``a.x <= b`` iff ``a'Q^{-1}a <= b**2``, i.e. iff the
block matrix ``[[Q, a], [a', b**2]]`` is positive semidefinite. Both are
convex in Q; feasibility is decided with a log-det barrier method on the
phase-I problem ``max s`` subject to margins of at least ``s``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import GptError, NumericalError, Polytope
from .polytope import _merge_halfspaces, dual_states_halfspaces

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
EPS_MAX = 0.2
EPS_TOL = 1e-4


class InconsistentWithQubit(GptError):
    """No shrink factor up to the search limit admits an ellipsoid."""


@dataclass
class EllipsoidResult:
    feasible: bool
    Q: Optional[np.ndarray]
    margin: float
    status: str                 # "feasible", "infeasible" or "nonconverged"
    iterations: int = 0


@dataclass
class ShrinkResult:
    epsilon_star: float
    feasible_ellipsoid: np.ndarray
    trace: list = field(default_factory=list)
    monotone: bool = True

    def to_dict(self) -> dict:
        return {"epsilon_star": self.epsilon_star,
                "feasible_ellipsoid": np.asarray(self.feasible_ellipsoid).tolist(),
                "trace": [{"epsilon": e, "feasible": f, "margin": s} for e, f, s in self.trace],
                "monotone": self.monotone}


def shrink_model(S, E, factor: float):
    """Scale the Bloch parts of all states (rows of S) and effects (columns of E).

    The leading components are left untouched.
    """
    if not 0 < factor <= 1:
        raise ValueError(f"shrink factor {factor} outside (0, 1]")
    S2 = np.array(S, dtype=float)
    E2 = np.array(E, dtype=float)
    S2[:, 1:] *= factor
    E2[1:, :] *= factor
    return S2, E2


# ---------------------------------------------------------------------------
# barrier solver

def _sym_basis(d):
    basis = []
    for i in range(d):
        for j in range(i, d):
            B = np.zeros((d, d))
            B[i, j] = B[j, i] = 1.0
            basis.append(B)
    return np.array(basis)


def _unpack(q, basis):
    return np.tensordot(q, basis, axes=1)


def ellipsoid_check(Q, points, halfspaces) -> float:
    """Largest violation of the two containment conditions (0 when satisfied)."""
    Q = np.asarray(Q, float)
    P = np.atleast_2d(points)
    pv = np.einsum("ia,ab,ib->i", P, Q, P) - 1.0
    A, b = halfspaces[:, :-1], halfspaces[:, -1]
    w = np.linalg.eigvalsh(Q)
    if w.min() <= 0:
        return float("inf")
    Qi = np.linalg.inv(Q)
    fv = np.sqrt(np.einsum("fa,ab,fb->f", A, Qi, A)) - b
    return float(max(0.0, pv.max(initial=-1.0), fv.max(initial=-1.0)))


def ellipsoid_between(points, halfspaces, tol: float = FEAS_TOL,
                      max_newton: int = 200) -> EllipsoidResult:
    """Decide whether a centered ellipsoid contains ``points`` and fits in the polytope.

    Parameters
    ----------
    points : (p, d) array
    halfspaces : (h, d + 1) array of rows ``[a, b]`` with ``b > 0``

    Returns
    -------
    EllipsoidResult
        ``status`` distinguishes certified infeasibility from solver failure.
    """
    P = np.atleast_2d(np.asarray(points, float))
    H = np.asarray(halfspaces, float)
    d = P.shape[1]
    A, b = H[:, :-1], H[:, -1]
    if np.any(b <= 0):
        raise ValueError("halfspace offsets must be positive (origin strictly inside)")
    basis = _sym_basis(d)
    npar = len(basis)
    # linear constraints: 1 - c_i.q - s >= 0
    C = np.einsum("ia,pab,ib->ip", P, basis, P)
    # LMIs: F_f = [[Q, a],[a', b^2]] - s I
    Ablk = np.zeros((npar + 1, d + 1, d + 1))
    Ablk[:npar, :d, :d] = basis
    Ablk[npar] = -np.eye(d + 1)
    F0 = np.zeros((len(H), d + 1, d + 1))
    F0[:, :d, d] = A
    F0[:, d, :d] = A
    F0[:, d, d] = b ** 2

    def lmi(x):
        return F0 + np.tensordot(x, Ablk, axes=1)

    def lin(x):
        return 1.0 - C @ x[:npar] - x[npar]

    # strictly feasible start
    r = np.sqrt((P ** 2).sum(axis=1)).max()
    x = np.zeros(npar + 1)
    x[:npar] = np.linalg.lstsq(basis.reshape(npar, -1).T, (np.eye(d) / (2 * r * r)).ravel(),
                               rcond=None)[0]
    x[npar] = 0.0
    m0 = min(lin(x).min(), np.linalg.eigvalsh(lmi(x)).min())
    x[npar] = m0 - 1.0
    nbar = len(P) + len(H) * (d + 1)

    def phi(x, t):
        g = lin(x)
        F = lmi(x)
        if g.min() <= 0:
            return np.inf
        sign, logdet = np.linalg.slogdet(F)
        if np.any(sign <= 0) or np.any(np.linalg.eigvalsh(F)[:, 0] <= 0):
            return np.inf
        return -t * x[npar] - np.log(g).sum() - logdet.sum()

    t = 1.0
    its = 0
    best_s = x[npar]
    while True:
        for _ in range(max_newton):
            its += 1
            g = lin(x)
            F = lmi(x)
            Fi = np.linalg.inv(F)
            Cx = np.column_stack([C, np.ones(len(C))])
            grad = -t * np.eye(npar + 1)[npar] + (Cx / g[:, None]).sum(axis=0)
            K = np.einsum("fij,pjk->fpik", Fi, Ablk)
            grad -= np.einsum("fpii->p", K)
            hess = (Cx / g[:, None] ** 2).T @ Cx + np.einsum("fpij,fqji->pq", K, K)
            try:
                step = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            dec = float(-grad @ step)
            if dec / 2 <= 1e-9:
                break
            f0 = phi(x, t)
            alpha = 1.0
            while phi(x + alpha * step, t) > f0 - 0.25 * alpha * dec:
                alpha *= 0.5
                if alpha < 1e-12:
                    break
            if alpha < 1e-12:
                break
            x = x + alpha * step
        else:
            if nbar / t > tol:
                return EllipsoidResult(False, None, x[npar], "nonconverged", its)
        s = x[npar]
        best_s = max(best_s, s)
        gap = nbar / t
        if s > tol:
            break
        if s + gap < -tol:
            return EllipsoidResult(False, None, float(s), "infeasible", its)
        if gap < tol * 0.1:
            break
        t *= 10.0
    s = x[npar]
    Q = _unpack(x[:npar], basis)
    if s >= -tol:
        return EllipsoidResult(True, Q, float(s), "feasible", its)
    return EllipsoidResult(False, None, float(s), "infeasible", its)


# ---------------------------------------------------------------------------
# shrink-factor bisection

def _test(Sv, Ev, eps):
    f = 1.0 - eps
    pts = Sv * f
    Es = np.array(Ev, float)
    Es[:, 1:] *= f
    H = _merge_halfspaces(dual_states_halfspaces(Es))
    return ellipsoid_between(pts, H)


def quantum_shrink_factor(S_real: Polytope, E_real: Polytope, eps_max: float = EPS_MAX,
                          eps_tol: float = EPS_TOL) -> ShrinkResult:
    """Smallest shrink fraction at which a centered ellipsoid fits between the
    shrunk realized states and the states consistent with the shrunk effects.

    Raises
    ------
    InconsistentWithQubit
        If even ``eps_max`` is infeasible.
    """
    Sv = S_real.vertices
    Ev = E_real.vertices
    trace = []

    def run(eps):
        res = _test(Sv, Ev, eps)
        if res.status == "nonconverged":
            raise NumericalError(f"ellipsoid feasibility did not converge at epsilon={eps}")
        trace.append((float(eps), bool(res.feasible), float(res.margin)))
        return res

    r0 = run(0.0)
    if r0.feasible:
        return ShrinkResult(0.0, r0.Q, trace, True)
    rmax = run(eps_max)
    if not rmax.feasible:
        raise InconsistentWithQubit(
            f"no ellipsoid fits even after shrinking by {eps_max:.0%}; "
            "data grossly inconsistent with a qubit")
    lo, hi, best = 0.0, eps_max, rmax
    while hi - lo > eps_tol:
        mid = 0.5 * (lo + hi)
        r = run(mid)
        if r.feasible:
            hi, best = mid, r
        else:
            lo = mid
    return ShrinkResult(hi, best.Q, trace, _monotone(trace))


def _monotone(trace) -> bool:
    feas = [e for e, f, _ in trace if f]
    infeas = [e for e, f, _ in trace if not f]
    return not feas or not infeas or max(infeas) < min(feas)
