"""Polytope calculus on H- and V-representations.

The half-space set {x : A x <= b} with unit-norm facet rows is the universal
uncertainty container of the package.  Operations cover enumeration in both
directions, diameter, minimal enclosing ball, affine maps, Minkowski sums,
intersection with infeasibility detection, Fourier-Motzkin projection with
LP-based redundancy pruning, facet-normal templates, and tight polytopic
enclosure of ellipsoids.

Emptiness is a first-class value (``HPolytope.empty_set``), not an
exception: downstream consumers treat an empty intersection as a signal.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from . import _kernels

UNIT_ROW_TOL = 1e-10
DEFAULT_TOL = 1e-9


class PolytopeError(ValueError):
    """Raised for structurally invalid polytope inputs (unbounded, degenerate)."""


@dataclass(frozen=True)
class HPolytope:
    """Half-space representation {x : A x <= b}; rows of A are unit vectors."""

    A: np.ndarray
    b: np.ndarray
    empty: bool = False

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise PolytopeError("row count mismatch between A and b")
        norms = np.linalg.norm(A, axis=1)
        if not self.empty:
            if np.any(norms < 1e-14):
                raise PolytopeError("zero facet normal")
            A = A / norms[:, None]
            b = b / norms
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_facets(self) -> int:
        return self.A.shape[0]

    @staticmethod
    def empty_set(dim: int) -> "HPolytope":
        return HPolytope(np.zeros((1, dim)), np.array([-1.0]), empty=True)

    @staticmethod
    def box(center, half_widths) -> "HPolytope":
        """Axis-aligned box; ``half_widths`` may be scalar or per-coordinate."""
        center = np.asarray(center, dtype=float).reshape(-1)
        hw = np.broadcast_to(np.asarray(half_widths, dtype=float), center.shape)
        n = center.shape[0]
        A = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([center + hw, -(center - hw)])
        return HPolytope(A, b)

    def contains(self, x, tol: float = DEFAULT_TOL) -> bool:
        if self.empty:
            return False
        x = np.asarray(x, dtype=float).reshape(self.dim)
        return bool(np.all(self.A @ x <= self.b + tol))

    def contains_many(self, X, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Vectorized membership for an (N, dim) batch."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        if self.empty:
            return np.zeros(X.shape[0], dtype=bool)
        return _kernels.satisfy_mask(
            np.ascontiguousarray(self.A), np.ascontiguousarray(self.b), X, tol
        )

    def to_json_dict(self) -> dict:
        if self.empty:
            return {"A": [], "b": [], "empty": True, "dim": self.dim}
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "HPolytope":
        if d.get("empty"):
            return HPolytope.empty_set(int(d.get("dim", 1)))
        return HPolytope(np.array(d["A"], dtype=float), np.array(d["b"], dtype=float))


@dataclass(frozen=True)
class VPolytope:
    """Vertex representation conv(v_1, ..., v_N)."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if V.shape[0] == 0:
            raise PolytopeError("empty vertex list")
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def to_json_dict(self) -> dict:
        return {"V": self.vertices.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "VPolytope":
        return VPolytope(np.array(d["V"], dtype=float))


@dataclass(frozen=True)
class Ellipsoid:
    """Set {p : (p - center)^T Sigma^{-1} (p - center) <= scale^2}.

    Degenerate (singular) shape matrices are legal; consumers use the
    support-function form which needs no inverse.
    """

    center: np.ndarray
    shape: np.ndarray
    scale: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        S = np.asarray(self.shape, dtype=float)
        if S.shape != (c.shape[0], c.shape[0]):
            raise PolytopeError("shape matrix dimension mismatch")
        if np.abs(S - S.T).max() > 1e-9:
            raise PolytopeError("shape matrix not symmetric")
        if self.scale < 0:
            raise PolytopeError("negative ellipsoid scale")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", 0.5 * (S + S.T))


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))
        if self.radius < 0:
            raise PolytopeError("negative radius")


# ---------------------------------------------------------------------------
# linear-programming helpers
# ---------------------------------------------------------------------------


def _lp(c, A, b):
    """min c^T x s.t. A x <= b, free variables.  Returns scipy result."""
    return linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * A.shape[1], method="highs")


def support_value(P: HPolytope, direction: np.ndarray) -> float:
    """Support function max_{x in P} <direction, x>; raises on unbounded."""
    res = _lp(-np.asarray(direction, dtype=float), P.A, P.b)
    if res.status == 3:
        raise PolytopeError("not a polytope")
    if res.status == 2:
        raise PolytopeError("empty set")
    if not res.success:
        raise PolytopeError(f"LP failure: {res.message}")
    return float(-res.fun)


def interval_hull(P: HPolytope) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate (lower, upper) bounds of P, by 2n support LPs."""
    n = P.dim
    lo = np.empty(n)
    hi = np.empty(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        hi[j] = support_value(P, e)
        lo[j] = -support_value(P, -e)
    return lo, hi


def feasible_point(P: HPolytope) -> np.ndarray | None:
    """A point well inside P (max-slack LP); None when infeasible."""
    M, n = P.A.shape
    # max s  s.t.  A x + s <= b  (s bounded above to keep the LP bounded)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A = np.hstack([P.A, np.ones((M, 1))])
    A = np.vstack([A, np.zeros((1, n + 1))])
    A[-1, -1] = 1.0
    b = np.concatenate([P.b, [1.0]])
    res = _lp(c, A, b)
    if res.status == 2 or not res.success:
        return None
    if res.x[-1] < -1e-9:
        return None
    return res.x[:n]


def remove_redundancy(P: HPolytope, tol: float = 1e-9) -> HPolytope:
    """Drop rows whose removal does not change the set (per-row LPs).

    Each test maximizes the row over the other constraints plus its own
    offset relaxed by one, which keeps the LP bounded; rows are dropped
    only on a definitive optimum at or below the original offset.
    """
    if P.empty:
        return P
    A, b = P.A.copy(), P.b.copy()
    keep = list(range(A.shape[0]))
    i = 0
    while i < len(keep):
        rows = keep[:i] + keep[i + 1 :]
        ri = keep[i]
        if not rows:
            break
        A_test = np.vstack([A[rows], A[ri]])
        b_test = np.concatenate([b[rows], [b[ri] + 1.0]])
        res = _lp(-A[ri], A_test, b_test)
        if res.success and -res.fun <= b[ri] + tol:
            keep.pop(i)
        else:
            i += 1
    if not keep:
        keep = [0]
    return HPolytope(A[keep], b[keep])


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------


def vertex_enum(P: HPolytope, tol: float = DEFAULT_TOL) -> VPolytope:
    """All vertices of a bounded H-polytope (dimensions <= 4 in practice).

    Enumerates basic solutions: every choice of ``dim`` independent active
    rows is solved and kept when feasible.  Robust to degenerate
    (lower-dimensional) sets, which simply yield fewer distinct vertices.

    Raises:
        PolytopeError: "not a polytope" when unbounded, "empty set" when
        infeasible.
    """
    if P.empty:
        raise PolytopeError("empty set")
    A, b = P.A, P.b
    M, n = A.shape
    if feasible_point(P) is None:
        raise PolytopeError("empty set")
    if M < n:
        raise PolytopeError("not a polytope")
    # boundedness comes out of the interval-hull LPs
    lo, hi = interval_hull(P)  # raises on unbounded
    if n == 1:
        return VPolytope(np.unique(np.array([lo, hi]), axis=0))
    combos = np.array(list(itertools.combinations(range(M), n)))
    mats = A[combos]  # (C, n, n)
    dets = np.abs(np.linalg.det(mats))
    good = dets > 1e-10
    verts: list[np.ndarray] = []
    if np.any(good):
        sols = np.linalg.solve(mats[good], b[combos[good]][..., None])[..., 0]
        feas = (sols @ A.T <= b[None, :] + tol).all(axis=1)
        verts = [v for v in sols[feas]]
    if not verts:
        raise PolytopeError("empty set")
    V = _dedupe_points(np.array(verts), 1e-8)
    # drop interior points of the deduped cloud (non-extreme basic solutions
    # can appear when > n facets meet away from a vertex)
    if V.shape[0] > n + 1:
        V = _extreme_points(V)
    return VPolytope(V)


def _dedupe_points(V: np.ndarray, tol: float) -> np.ndarray:
    """Greedy distance-based dedupe (stable order)."""
    kept: list[np.ndarray] = []
    for v in V:
        if all(np.linalg.norm(v - u) > tol for u in kept):
            kept.append(v)
    return np.array(kept)


def _extreme_points(V: np.ndarray) -> np.ndarray:
    """Subset of points that are vertices of conv(V)."""
    try:
        hull = ConvexHull(V)
        return V[np.sort(hull.vertices)]
    except QhullError:
        # flat cloud: prune by LP membership test instead
        keep = []
        for i in range(V.shape[0]):
            others = np.delete(V, i, axis=0)
            if not _in_hull(V[i], others):
                keep.append(i)
        return V[keep] if keep else V[:1]


def _in_hull(x: np.ndarray, V: np.ndarray, tol: float = 1e-9) -> bool:
    """x in conv(V), by LP feasibility on the convex weights."""
    N, n = V.shape
    A_eq = np.vstack([V.T, np.ones((1, N))])
    b_eq = np.concatenate([x, [1.0]])
    res = linprog(
        np.zeros(N), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * N, method="highs"
    )
    return bool(res.success)


def facet_enum(V: VPolytope, tol: float = DEFAULT_TOL) -> HPolytope:
    """H-representation of conv(vertices), unit-normalized rows.

    Raises:
        PolytopeError: "degenerate hull" for < n+1 affinely independent
        points (lower-dimensional hulls have no full-dimensional H-form).
    """
    pts = V.vertices
    N, n = pts.shape
    if N == 1:
        # exact degenerate H-form of a single point: box template with
        # zero-width offsets
        A = np.vstack([np.eye(n), -np.eye(n)])
        return HPolytope(A, A @ pts[0])
    if N < n + 1:
        raise PolytopeError("degenerate hull")
    try:
        hull = ConvexHull(pts)
    except QhullError as e:
        raise PolytopeError("degenerate hull") from e
    eqs = hull.equations  # rows [normal, offset] with normal.x + offset <= 0
    A = eqs[:, :n]
    b = -eqs[:, n]
    # dedupe coplanar facets (qhull triangulates)
    scale = np.maximum(1.0, np.abs(b))
    key = np.round(np.column_stack([A, b / scale]), 9)
    _, idx = np.unique(key, axis=0, return_index=True)
    return HPolytope(A[np.sort(idx)], b[np.sort(idx)])


# ---------------------------------------------------------------------------
# metric quantities
# ---------------------------------------------------------------------------


def diameter(V: VPolytope) -> float:
    """Largest pairwise vertex distance (equals the set diameter by convexity)."""
    pts = V.vertices
    if pts.shape[0] == 1:
        return 0.0
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    return float(np.sqrt(d2.max()))


def chebyshev_ball(V: VPolytope) -> Ball:
    """Minimal ball **enclosing** all vertices (hence the whole polytope).

    Welzl's move-to-front algorithm with an exact final radius pass, so the
    returned ball always covers every vertex.
    """
    pts = [np.asarray(p, dtype=float) for p in V.vertices]
    n = pts[0].shape[0]
    rng = np.random.default_rng(0x5EED)
    order = rng.permutation(len(pts))
    pts = [pts[i] for i in order]
    c, r = _welzl(pts, [], n)
    # certify enclosure independent of Welzl's internal tolerances
    r = max(float(np.linalg.norm(p - c)) for p in pts)
    return Ball(c, r)


def _welzl(P: list, R: list, n: int) -> tuple[np.ndarray, float]:
    if not P or len(R) == n + 1:
        return _ball_of_support(R, n)
    p = P[-1]
    c, r = _welzl(P[:-1], R, n)
    if np.linalg.norm(p - c) <= r + 1e-12:
        return c, r
    return _welzl(P[:-1], R + [p], n)


def _ball_of_support(R: list, n: int) -> tuple[np.ndarray, float]:
    if not R:
        return np.zeros(n), 0.0
    if len(R) == 1:
        return R[0].copy(), 0.0
    p0 = R[0]
    Q = np.array([p - p0 for p in R[1:]])
    G = 2.0 * Q @ Q.T
    h = np.sum(Q * Q, axis=1)
    try:
        alpha = np.linalg.lstsq(G, h, rcond=None)[0]
    except np.linalg.LinAlgError:
        alpha = np.zeros(len(R) - 1)
    c = p0 + Q.T @ alpha
    r = max(float(np.linalg.norm(p - c)) for p in R)
    return c, r


# ---------------------------------------------------------------------------
# set operations
# ---------------------------------------------------------------------------


def affine_map(P, Hmap: np.ndarray, q: np.ndarray | None = None):
    """Image set {Hmap x + q : x in P}.

    H-polytopes with square invertible maps stay in H-form; everything else
    routes through vertices (returning the matching representation kind).
    """
    Hmap = np.atleast_2d(np.asarray(Hmap, dtype=float))
    m = Hmap.shape[0]
    q = np.zeros(m) if q is None else np.asarray(q, dtype=float).reshape(m)
    if isinstance(P, VPolytope):
        return VPolytope(P.vertices @ Hmap.T + q)
    if P.empty:
        return HPolytope.empty_set(m)
    if Hmap.shape[0] == Hmap.shape[1]:
        Hinv = np.linalg.inv(Hmap)
        A = P.A @ Hinv
        return HPolytope(A, P.b + A @ q)
    V = vertex_enum(P)
    return facet_enum(VPolytope(V.vertices @ Hmap.T + q))


def minkowski_sum(P1: VPolytope, P2: VPolytope) -> HPolytope:
    """Facet enumeration of all pairwise vertex sums (exact for polytopes)."""
    if P1.dim != P2.dim:
        raise PolytopeError("dimension mismatch")
    sums = (P1.vertices[:, None, :] + P2.vertices[None, :, :]).reshape(-1, P1.dim)
    sums = np.unique(np.round(sums, 12), axis=0)
    return facet_enum(VPolytope(sums))


def intersect(P1: HPolytope, P2: HPolytope, prune: bool = True) -> HPolytope:
    """Conjunction of the half-space systems; empty marker when infeasible."""
    if P1.dim != P2.dim:
        raise PolytopeError("dimension mismatch")
    if P1.empty or P2.empty:
        return HPolytope.empty_set(P1.dim)
    if P1.n_facets == P2.n_facets and np.array_equal(P1.A, P2.A):
        # shared template: exact intersection is the elementwise offset min
        out = HPolytope(P1.A, np.minimum(P1.b, P2.b))
    else:
        out = HPolytope(np.vstack([P1.A, P2.A]), np.concatenate([P1.b, P2.b]))
    if feasible_point(out) is None:
        return HPolytope.empty_set(P1.dim)
    return remove_redundancy(out) if prune else out


def project(P: HPolytope, keep, tol: float = DEFAULT_TOL) -> HPolytope:
    """Exact shadow of P onto the coordinates in ``keep`` (Fourier-Motzkin).

    Redundant rows are pruned by LP after every elimination step to bound
    the row growth.
    """
    keep = list(keep)
    if P.empty:
        return HPolytope.empty_set(len(keep))
    A, b = P.A.copy(), P.b.copy()
    n = P.dim
    drop = [j for j in range(n) if j not in keep]
    cols = list(range(n))
    try:
        for target in drop:
            j = cols.index(target)
            A, b = _fm_eliminate(A, b, j, tol)
            cols.pop(j)
            pruned = remove_redundancy(HPolytope(A, b))
            A, b = pruned.A, pruned.b
    except _FmEmpty:
        return HPolytope.empty_set(len(keep))
    # reorder the surviving columns to the requested order
    perm = [cols.index(k) for k in keep]
    return HPolytope(A[:, perm], b)


def _fm_eliminate(A: np.ndarray, b: np.ndarray, j: int, tol: float):
    col = A[:, j]
    pos = np.where(col > 1e-11)[0]
    neg = np.where(col < -1e-11)[0]
    zero = np.where(np.abs(col) <= 1e-11)[0]
    rows = [np.delete(A[zero], j, axis=1)] if zero.size else []
    offs = [b[zero]] if zero.size else []
    if pos.size and neg.size:
        Ap = A[pos] / col[pos, None]
        bp = b[pos] / col[pos]
        An = A[neg] / (-col[neg, None])
        bn = b[neg] / (-col[neg])
        comb = Ap[:, None, :] + An[None, :, :]
        rows.append(np.delete(comb.reshape(-1, A.shape[1]), j, axis=1))
        offs.append((bp[:, None] + bn[None, :]).reshape(-1))
    if not rows:
        raise PolytopeError("not a polytope")
    A2 = np.vstack(rows)
    b2 = np.concatenate(offs)
    norms = np.linalg.norm(A2, axis=1)
    ok = norms > 1e-12
    if np.any(~ok & (b2 < -tol)):
        raise _FmEmpty()
    if not np.any(ok):
        raise PolytopeError("not a polytope")
    return A2[ok], b2[ok]


class _FmEmpty(Exception):
    """Internal: elimination produced 0 <= negative, i.e. an empty set."""


def template_normals(kind, dim: int) -> np.ndarray:
    """Unit facet-normal templates.

    ``box``: the 2*dim signed axis directions.  ``box_diag45`` (3D): the 6
    axis normals plus the 12 edge-diagonal normals (+-e_i +- e_j)/sqrt(2),
    giving 45-degree angles between adjacent facets.  A custom array of
    row normals is accepted as-is (after unit normalization).
    """
    if isinstance(kind, (np.ndarray, list, tuple)):
        A = np.atleast_2d(np.asarray(kind, dtype=float))
        return A / np.linalg.norm(A, axis=1)[:, None]
    if kind == "box":
        return np.vstack([np.eye(dim), -np.eye(dim)])
    if kind == "box_diag45":
        if dim != 3:
            raise PolytopeError("box_diag45 template is 3-dimensional")
        rows = [np.eye(3), -np.eye(3)]
        for i, j in itertools.combinations(range(3), 2):
            for si, sj in itertools.product([1.0, -1.0], repeat=2):
                r = np.zeros(3)
                r[i], r[j] = si, sj
                rows.append(r[None, :] / np.sqrt(2.0))
        return np.vstack(rows)
    raise PolytopeError(f"unsupported template kind: {kind!r}")


def enclose_ellipsoid(E: Ellipsoid, A: np.ndarray) -> HPolytope:
    """Tightest polytope with normals ``A`` containing the ellipsoid.

    Per-direction support-function offsets b_m = a_m . c + C sqrt(a_m^T S a_m);
    valid for singular shape matrices as well.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    quad = np.einsum("mi,ij,mj->m", A, E.shape, A)
    b = A @ E.center + E.scale * np.sqrt(np.maximum(quad, 0.0))
    return HPolytope(A, b)


def inflate(P: HPolytope, eps: float) -> HPolytope:
    """Outer bound of P + ball(eps): offsets raised by eps (unit rows)."""
    if eps < 0:
        raise PolytopeError("negative inflation")
    if P.empty:
        return P
    return HPolytope(P.A, P.b + eps)


def contains(P: HPolytope, x, tol: float = DEFAULT_TOL) -> bool:
    return P.contains(x, tol)


# ---------------------------------------------------------------------------
# sampling (tests and conservatism drivers)
# ---------------------------------------------------------------------------


def sample_uniform(P: HPolytope, n: int, rng, burn_in: int = 100, thin: int = 5) -> np.ndarray:
    """Approximately uniform interior points by hit-and-run.

    Guarantees never depend on sampler quality; this exists for conservatism
    tests and plots.  Deterministic given the caller's generator state.
    """
    if P.empty:
        raise PolytopeError("empty set")
    x0 = feasible_point(P)
    if x0 is None:
        raise PolytopeError("empty set")
    total = burn_in + thin * n + 1
    dirs = rng.normal(size=(total, P.dim))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    unifs = rng.uniform(size=total)
    return _kernels.hit_and_run_chain(
        np.ascontiguousarray(P.A),
        np.ascontiguousarray(P.b),
        np.ascontiguousarray(x0),
        dirs,
        unifs,
        burn_in,
        thin,
        n,
    )


def polytope_to_json(P) -> str:
    return json.dumps(P.to_json_dict(), sort_keys=True)


def polytope_from_json(s: str):
    d = json.loads(s)
    if "V" in d:
        return VPolytope.from_json_dict(d)
    return HPolytope.from_json_dict(d)
