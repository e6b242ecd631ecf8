"""Convex polytopes: representation conversion, GPT duals and volumes.

Facet and vertex enumeration are delegated to Qhull (``scipy.spatial``);
this module adds the pieces Qhull does not provide: merging of coplanar
triangulated facets into a minimal H-representation, pruning of redundant
halfspaces and non-vertex points, degeneracy and boundedness diagnostics,
and the GPT-specific dual constructions.

Halfspaces are stored as rows ``[a, b]`` meaning ``a . x <= b`` with
``|a| = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError, cKDTree

from .core import GptError, GptModel, Polytope

TOL = 1e-9
DEDUP_TOL = 1e-8


class DegeneracyError(GptError, ValueError):
    """Point set or halfspace system is not full-dimensional."""

    def __init__(self, msg, affine_dim=None):
        super().__init__(msg)
        self.affine_dim = affine_dim


class UnboundedError(GptError, ValueError):
    """Halfspace system describes an unbounded region."""

    def __init__(self, msg, direction=None):
        super().__init__(msg)
        self.direction = direction


@dataclass(frozen=True)
class StateSpacePoly(Polytope):
    """State space in the ``k - 1`` Bloch coordinates (leading 1 dropped)."""


@dataclass(frozen=True)
class EffectSpacePoly(Polytope):
    """Effect space in all ``k`` coordinates."""


# ---------------------------------------------------------------------------
# helpers

def affine_dimension(points, tol=TOL) -> int:
    P = np.asarray(points, float)
    if len(P) <= 1:
        return 0
    X = P[1:] - P[0]
    sv = np.linalg.svd(X, compute_uv=False)
    scale = max(1.0, np.abs(P).max())
    return int(np.sum(sv > tol * scale * max(1, len(P)) ** 0.5))


def dedupe_points(points, tol=DEDUP_TOL) -> np.ndarray:
    """Drop points within ``tol`` (max-norm) of an earlier point, keeping order."""
    P = np.asarray(points, float)
    if len(P) <= 1:
        return P
    return P[_first_of_clusters(P, tol)]


def _first_of_clusters(X, tol):
    """Index of the first member of each cluster of rows within ``tol`` (max-norm)."""
    pairs = cKDTree(X).query_pairs(tol, p=np.inf, output_type="ndarray")
    parent = np.arange(len(X))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = root(i), root(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([root(i) for i in range(len(X))])
    return np.unique(roots)


def _normalize(H) -> np.ndarray:
    H = np.asarray(H, float)
    nrm = np.linalg.norm(H[:, :-1], axis=1)
    ok = nrm > 0
    out = H[ok] / nrm[ok, None]
    return out


def _merge_halfspaces(H, tol=DEDUP_TOL) -> np.ndarray:
    H = _normalize(H)
    K = H[_first_of_clusters(H, tol)] if len(H) > 1 else H
    return K[np.lexsort(K[:, ::-1].T)]


def _prune(V, H, tol=1e-7):
    """Keep halfspaces that are facets and points that are vertices.

    A halfspace is a facet when the points tight on it span a ``dim - 1``
    affine space; a point is a vertex when the facet normals tight at it
    have rank ``dim``.
    """
    d = V.shape[1]
    scale = max(1.0, np.abs(V).max())
    slack = H[:, -1][None, :] - V @ H[:, :-1].T        # (nv, nh)
    tight = np.abs(slack) <= tol * scale
    fkeep = np.array([tight[:, j].sum() >= d and affine_dimension(V[tight[:, j]], 1e-7) >= d - 1
                      for j in range(H.shape[0])], dtype=bool)
    H = H[fkeep]
    tight = tight[:, fkeep]
    vkeep = np.array([tight[i].sum() >= d and np.linalg.matrix_rank(H[tight[i], :-1], 1e-7) >= d
                      for i in range(V.shape[0])], dtype=bool)
    return V[vkeep], H


def _interval_facets(V):
    lo, hi = V[:, 0].min(), V[:, 0].max()
    if hi - lo <= TOL * max(1.0, abs(lo), abs(hi)):
        raise DegeneracyError("points are affinely dependent (affine hull dimension 0)", 0)
    return np.array([[lo], [hi]]), np.array([[1.0, hi], [-1.0, -lo]])


# ---------------------------------------------------------------------------
# representation conversion

def facet_enumeration(vertices, return_vertices=False):
    """Minimal halfspace representation of the convex hull of ``vertices``.

    Returns
    -------
    H : (h, d + 1) array of normalized halfspaces
    V : (v, d) array of hull vertices, when ``return_vertices`` is set

    Raises
    ------
    DegeneracyError
        If the points are not full-dimensional; ``affine_dim`` gives the
        dimension of their affine hull.
    """
    P = dedupe_points(vertices)
    d = P.shape[1]
    adim = affine_dimension(P)
    if adim < d:
        raise DegeneracyError(f"points span an affine space of dimension {adim} < {d}", adim)
    if d == 1:
        V, H = _interval_facets(P)
    else:
        try:
            hull = ConvexHull(P)
        except QhullError as exc:  # pragma: no cover - guarded by affine_dimension
            raise DegeneracyError(str(exc), adim) from exc
        eq = hull.equations
        H = _merge_halfspaces(np.column_stack([eq[:, :-1], -eq[:, -1]]))
        V = P[np.sort(hull.vertices)]
        V, H = _prune(V, H)
    return (H, V) if return_vertices else H


def chebyshev_center(H):
    """Center and radius of the largest ball inside ``{x : A x <= b}``.

    Returns ``(None, -inf)`` when the system is infeasible.
    """
    H = np.asarray(H, float)
    A, b = H[:, :-1], H[:, -1]
    d = A.shape[1]
    nrm = np.linalg.norm(A, axis=1)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    Aub = np.column_stack([A, nrm])
    res = linprog(c, A_ub=Aub, b_ub=b, bounds=[(None, None)] * d + [(0, None)], method="highs")
    if res.status == 2:
        return None, -math.inf
    if res.status == 3:
        return None, math.inf
    return res.x[:d], float(res.x[-1])


def unbounded_direction(H):
    """A recession direction of ``{x : A x <= b}``, or None when bounded."""
    H = np.asarray(H, float)
    A = H[:, :-1]
    d = A.shape[1]
    # bounded iff no nonzero y with A y <= 0; probe each +/- axis
    for i in range(d):
        for sgn in (1.0, -1.0):
            c = np.zeros(d)
            c[i] = -sgn
            res = linprog(c, A_ub=A, b_ub=np.zeros(len(A)), bounds=[(-1, 1)] * d, method="highs")
            if res.status == 0 and -res.fun > 1e-9:
                y = res.x
                return y / np.linalg.norm(y)
    return None


def vertex_enumeration(halfspaces, interior_point=None, return_halfspaces=False):
    """Vertices of the bounded polytope ``{x : A x <= b}``.

    Redundant halfspaces are dropped from the returned H-representation.

    Raises
    ------
    UnboundedError
        If the region is unbounded; ``direction`` holds a recession direction.
    DegeneracyError
        If the region is empty or not full-dimensional.
    """
    H = _normalize(np.asarray(halfspaces, float))
    d = H.shape[1] - 1
    ray = unbounded_direction(H)
    if ray is not None:
        raise UnboundedError(f"polytope is unbounded along {np.round(ray, 6).tolist()}", ray)
    if interior_point is None or np.any(H[:, :-1] @ interior_point - H[:, -1] > -TOL):
        center, radius = chebyshev_center(H)
        if center is None or radius <= TOL:
            raise DegeneracyError("halfspace system has no interior (empty or flat)",
                                  None if center is None else d - 1)
        interior_point = center
    if d == 1:
        a, b = H[:, 0], H[:, 1]
        hi = np.min(b[a > 0] / a[a > 0])
        lo = np.max(b[a < 0] / a[a < 0])
        V = np.array([[lo], [hi]])
        Hm = np.array([[1.0, hi], [-1.0, -lo]])
    else:
        # Qhull convention: rows [a, -b] meaning a.x - b <= 0
        hs = HalfspaceIntersection(np.column_stack([H[:, :-1], -H[:, -1]]),
                                   np.asarray(interior_point, float))
        V = dedupe_points(hs.intersections)
        Hm = _merge_halfspaces(H)
        V, Hm = _prune(V, Hm)
    return (V, Hm) if return_halfspaces else V


def make_polytope(vertices, cls=Polytope, role=""):
    P = np.asarray(vertices, float)
    H, V = facet_enumeration(P, return_vertices=True)
    return cls(dim=P.shape[1], vertices=V, halfspaces=H, role=role)


def polytope_from_halfspaces(H, cls=Polytope, role="", interior_point=None):
    V, Hm = vertex_enumeration(H, interior_point, return_halfspaces=True)
    return cls(dim=V.shape[1], vertices=V, halfspaces=Hm, role=role)


def contains(P: Polytope, points, tol=1e-7) -> np.ndarray:
    """Boolean per point: inside ``P`` up to ``tol`` slack on each halfspace."""
    X = np.atleast_2d(np.asarray(points, float))
    return np.all(X @ P.A.T - P.b <= tol, axis=1)


def max_violation(P: Polytope, points) -> float:
    X = np.atleast_2d(np.asarray(points, float))
    return float(max(0.0, (X @ P.A.T - P.b).max()))


# ---------------------------------------------------------------------------
# GPT spaces

def realized_states(model: GptModel) -> StateSpacePoly:
    """Convex hull of the state vectors, in the ``k - 1`` Bloch coordinates."""
    return make_polytope(model.states[:, 1:], StateSpacePoly, "realized")


def realized_effects(model: GptModel) -> EffectSpacePoly:
    """Convex hull of the effect vectors (columns of E)."""
    return make_polytope(model.effects.T, EffectSpacePoly, "realized")


def dual_states_halfspaces(effect_vertices) -> np.ndarray:
    """``0 <= s.e <= 1`` for each effect, with ``s = (1, x)``, as halfspaces on x."""
    Ev = np.asarray(effect_vertices, float)
    e0, eb = Ev[:, 0], Ev[:, 1:]
    trivial = np.linalg.norm(eb, axis=1) <= TOL
    if np.any((e0[trivial] < -TOL) | (e0[trivial] > 1 + TOL)):
        raise DegeneracyError("an effect with no Bloch part lies outside [0, 1]; dual is empty")
    eb, e0 = eb[~trivial], e0[~trivial]
    return np.vstack([np.column_stack([eb, 1 - e0]), np.column_stack([-eb, e0])])


def dual_effects_halfspaces(state_vertices) -> np.ndarray:
    """``0 <= s.e <= 1`` for each lifted state ``s = (1, x)``, as halfspaces on e."""
    Sv = np.asarray(state_vertices, float)
    S = np.column_stack([np.ones(len(Sv)), Sv])
    ones = np.ones(len(S))
    return np.vstack([np.column_stack([S, ones]), np.column_stack([-S, 0 * ones])])


def dual_states(E_real: Polytope) -> StateSpacePoly:
    """States consistent with every realized effect (the dual of the effect space).

    Only the vertices of the effect polytope need to be imposed.
    """
    H = dual_states_halfspaces(E_real.vertices)
    x0 = np.zeros(E_real.dim - 1)
    return polytope_from_halfspaces(H, StateSpacePoly, "consistent", x0)


def dual_effects(S_real: Polytope) -> EffectSpacePoly:
    """Effects consistent with every realized state, i.e. the dual of the
    subnormalized state space ``hull(S u {0})``."""
    H = dual_effects_halfspaces(S_real.vertices)
    x0 = np.zeros(S_real.dim + 1)
    x0[0] = 0.5
    return polytope_from_halfspaces(H, EffectSpacePoly, "consistent", x0)


# ---------------------------------------------------------------------------
# volumes and projections

def volume(P: Polytope) -> float:
    """Euclidean volume by triangulating facet cones from the vertex centroid."""
    if P.vertices is None:
        P = polytope_from_halfspaces(P.halfspaces)
    V = P.vertices
    d = V.shape[1]
    if affine_dimension(V) < d:
        raise DegeneracyError("volume of a flat polytope is undefined", affine_dimension(V))
    if d == 1:
        return float(V.max() - V.min())
    hull = ConvexHull(V)
    c = V.mean(axis=0)
    simp = V[hull.simplices] - c                      # (nf, d, d)
    return float(np.abs(np.linalg.det(simp)).sum() / math.factorial(d))


def axis_projections(P: Polytope) -> list:
    """Hulls of the vertex set with each coordinate dropped in turn."""
    out = []
    for ax in range(P.dim):
        X = np.delete(P.vertices, ax, axis=1)
        H, V = facet_enumeration(X, return_vertices=True)
        out.append(Polytope(dim=P.dim - 1, vertices=V, halfspaces=H, role=f"drop{ax}"))
    return out


def to_dict(P: Polytope) -> dict:
    d = {"dim": P.dim, "role": P.role, "kind": type(P).__name__}
    if P.vertices is not None:
        d["vertices"] = P.vertices.tolist()
    if P.halfspaces is not None:
        d["halfspaces"] = P.halfspaces.tolist()
    return d


def from_dict(d: dict) -> Polytope:
    cls = {"StateSpacePoly": StateSpacePoly, "EffectSpacePoly": EffectSpacePoly}.get(
        d.get("kind"), Polytope)
    return cls(dim=d["dim"], vertices=d.get("vertices"), halfspaces=d.get("halfspaces"),
               role=d.get("role", ""))
