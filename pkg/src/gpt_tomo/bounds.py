"""Inner/outer depolarized-qubit fits and the bounds derived from them.

The depolarized qubit state space is taken to be an origin-centered ball of
radius ``w`` in the Bloch coordinates; the effect space is the diamond
``hull({0, u} u {(1/2, x) : |x| <= w'/2})``. A body of that shape contains
exactly the effects with ``|e_bloch| <= w' min(e0, 1 - e0)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import GptError, Polytope
from .polytope import contains, volume

log = logging.getLogger(__name__)

#: Maximal POM success probability for preparation-noncontextual models.
C_NC = 0.75
#: Maximal quantum POM success probability, 1/2 + 1/(2 sqrt 2).
C_Q = 0.5 + 1 / (2 * math.sqrt(2))
#: Local-causality bound on the CHSH game success probability.
B_LOC = 0.75
#: Quantum (Tsirelson) bound on the CHSH game success probability.
B_Q = C_Q

CENTROID_WARN = 0.1


class BoundsError(GptError, ValueError):
    pass


def inner_ball_radius(S: Polytope) -> float:
    """Radius of the largest origin-centered ball inside ``S``: ``min b/|a|``."""
    A, b = S.A, S.b
    r = b / np.linalg.norm(A, axis=1)
    j = int(np.argmin(r))
    if r[j] <= 0:
        raise BoundsError(f"origin is not interior: facet {j} has offset {r[j]:.3g}")
    return float(r[j])


def outer_ball_radius(S: Polytope) -> float:
    """Radius of the smallest origin-centered ball containing ``S``."""
    return float(np.linalg.norm(S.vertices, axis=1).max())


def inner_effect_w(E: Polytope) -> float:
    """Largest ``w'`` whose depolarized-qubit effect diamond fits inside ``E``.

    For a facet ``a.e <= b`` the diamond is contained iff ``0 <= b``,
    ``a0 <= b`` and ``a0/2 + (w'/2)|a_bloch| <= b``.
    """
    A, b = E.A, E.b
    k = A.shape[1]
    u = np.zeros(k)
    u[0] = 1.0
    if not (contains(E, np.zeros(k), 1e-9)[0] and contains(E, u, 1e-9)[0]):
        raise BoundsError("zero effect or unit effect lies outside the effect polytope")
    a0, ab = A[:, 0], np.linalg.norm(A[:, 1:], axis=1)
    room = b - a0 / 2
    if np.any(room < -1e-12):
        log.warning("effect polytope excludes (1/2, 0, ...); inner effect fit is 0")
        return 0.0
    sel = ab > 1e-12
    return float(np.min(2 * room[sel] / ab[sel]))


def outer_effect_w(E: Polytope, tol: float = 1e-9) -> float:
    """Smallest ``w'`` whose depolarized-qubit effect diamond contains ``E``:
    ``max |e_bloch| / min(e0, 1 - e0)`` over the vertices."""
    V = E.vertices
    e0 = V[:, 0]
    eb = np.linalg.norm(V[:, 1:], axis=1)
    if np.any((e0 < -tol) | (e0 > 1 + tol)):
        raise BoundsError("effect vertex with e0 outside [0, 1]; no finite w' exists")
    edge = np.minimum(e0, 1 - e0)
    tip = edge <= tol
    if np.any(eb[tip] > tol):
        raise BoundsError("effect vertex at e0 in {0, 1} with a Bloch part; no finite w' exists")
    return float((eb[~tip] / edge[~tip]).max())


def pom_success(w: float, wp: float) -> float:
    """POM success probability for the (w, w')-depolarized qubit: ``1/2 + w w'/(2 sqrt 2)``."""
    return 0.5 + w * wp / (2 * math.sqrt(2))


@dataclass
class BoundsReport:
    w1: float
    w1p: float
    w2: float
    w2p: float
    lb_cmin: float
    ub_cmax: float
    ub_bmax: float
    volume_ratio: float
    epsilon_bound: float
    c_nc: float = C_NC
    c_q: float = C_Q
    b_loc: float = B_LOC
    b_q: float = B_Q
    reciprocity_state: float = math.nan
    reciprocity_effect: float = math.nan
    warnings: list = field(default_factory=list)
    std: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def analyze_bounds(S_real: Polytope, E_real: Polytope, S_cons: Polytope,
                   E_cons: Polytope) -> BoundsReport:
    """Inner/outer qubit fits and the POM, CHSH, volume and epsilon bounds.

    The CHSH upper bound coincides with the POM upper bound; the local bound
    ``B_LOC`` is the only lower bound on the CHSH quantity available here.
    """
    warnings = []
    centroid = S_real.vertices.mean(axis=0)
    if np.linalg.norm(centroid) > CENTROID_WARN:
        msg = (f"realized state centroid is {np.linalg.norm(centroid):.3f} from the origin; "
               "origin-centered fits are loose")
        log.warning(msg)
        warnings.append(msg)
    w1 = inner_ball_radius(S_real)
    w1p = inner_effect_w(E_real)
    w2 = outer_ball_radius(S_cons)
    w2p = outer_effect_w(E_cons)
    lb = pom_success(w1, w1p)
    ub = pom_success(w2, w2p)
    ratio = volume(S_real) / volume(S_cons)
    return BoundsReport(
        w1=w1, w1p=w1p, w2=w2, w2p=w2p, lb_cmin=lb, ub_cmax=ub, ub_bmax=ub,
        volume_ratio=ratio, epsilon_bound=1 - w1 * w1p,
        reciprocity_state=w2p * w1, reciprocity_effect=w2 * w1p, warnings=warnings)
