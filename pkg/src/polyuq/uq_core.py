"""The guaranteed uncertainty-quantification primitives.

* forward: push a point polytope through an uncertain rigid transformation,
* backward: recover the pose set consistent with point correspondences,
* compound (direct): bound the pose product with per-facet certified solves,
* compound (indirect): decomposed rotation-ball/translation propagation with
  a closed-form inner maximization.

Every emitted offset passes through the certified-bound inflation, so the
output sets provably contain the true quantities whenever the input bounds
hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, sdp_relax
from .liegroup import (
    Pose,
    devec_rotation,
    exp_map,
    geodesic_distance,
    project_so3,
    vec_rotation,
    vectorize_pose,
)
from .polytope import (
    DEFAULT_TOL,
    Ellipsoid,
    HPolytope,
    PolytopeError,
    VPolytope,
    chebyshev_ball,
    diameter,
    enclose_ellipsoid,
    minkowski_sum,
    project,
    sample_uniform,
    template_normals,
    vertex_enum,
)


class UqError(RuntimeError):
    pass


_HIGH_ACCURACY_BACKEND = sdp_relax.ClarabelBackend(tol=1e-12)


@dataclass(frozen=True)
class PosePolytope:
    """Pose uncertainty {T in SE(3) : H x(T) <= d} over the 12-vector
    x(T) = col(vec(R), t).  Rows are unit-normalized.

    The raw linear system may be unbounded in the rotation coordinates
    (their feasibility is always implicitly confined to SE(3)); operations
    that need bounded linear programs append the valid box |vec(R)| <= 1.
    """

    H: np.ndarray
    d: np.ndarray
    empty: bool = False

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        d = np.asarray(self.d, dtype=float).reshape(-1)
        if H.shape[1] != 12:
            raise UqError("pose polytope rows must have 12 columns")
        if H.shape[0] != d.shape[0]:
            raise UqError("row count mismatch")
        if not self.empty:
            norms = np.linalg.norm(H, axis=1)
            if np.any(norms < 1e-14):
                raise UqError("zero constraint row")
            H = H / norms[:, None]
            d = d / norms
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "d", d)

    @staticmethod
    def empty_set() -> "PosePolytope":
        return PosePolytope(np.zeros((1, 12)), np.array([-1.0]), empty=True)

    @staticmethod
    def from_pose_box(T: Pose, hw_rot: float, hw_t: float) -> "PosePolytope":
        """Box around x(T): rotation entries +-hw_rot, translation +-hw_t."""
        x = vectorize_pose(T)
        hw = np.concatenate([np.full(9, hw_rot), np.full(3, hw_t)])
        H = np.vstack([np.eye(12), -np.eye(12)])
        d = np.concatenate([x + hw, -(x - hw)])
        return PosePolytope(H, d)

    @staticmethod
    def exact(T: Pose) -> "PosePolytope":
        """Degenerate set pinning x(T) exactly (paired inequalities)."""
        return PosePolytope.from_pose_box(T, 0.0, 0.0)

    def contains(self, x, tol: float = DEFAULT_TOL) -> bool:
        if self.empty:
            return False
        x = np.asarray(x, dtype=float).reshape(12)
        return bool(np.all(self.H @ x <= self.d + tol))

    def contains_pose(self, T: Pose, tol: float = DEFAULT_TOL) -> bool:
        return self.contains(vectorize_pose(T), tol)

    def contains_many(self, X, tol: float = DEFAULT_TOL) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        if self.empty:
            return np.zeros(X.shape[0], dtype=bool)
        return _kernels.satisfy_mask(
            np.ascontiguousarray(self.H), np.ascontiguousarray(self.d), X, tol
        )

    def to_json_dict(self) -> dict:
        if self.empty:
            return {"H": [], "d": [], "empty": True}
        return {"H": self.H.tolist(), "d": self.d.tolist()}

    @staticmethod
    def from_json_dict(dd: dict) -> "PosePolytope":
        if dd.get("empty"):
            return PosePolytope.empty_set()
        return PosePolytope(np.array(dd["H"], dtype=float), np.array(dd["d"], dtype=float))


@dataclass(frozen=True)
class RotationBallSet:
    """Geodesic rotation uncertainty {center . Exp(theta w) : theta <= radius}."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3, 3))
        if not (0.0 <= self.radius <= np.pi + 1e-12):
            raise UqError("rotation ball radius outside [0, pi]")

    def contains(self, R: np.ndarray, tol: float = 1e-9) -> bool:
        return geodesic_distance(R, self.center) <= self.radius + tol


@dataclass(frozen=True)
class DecomposedPoseSet:
    """Rotation ball plus translation polytope (3D)."""

    rotation: RotationBallSet
    translation: HPolytope

    @property
    def empty(self) -> bool:
        return self.translation.empty

    def contains_pose(self, T: Pose, tol: float = DEFAULT_TOL) -> bool:
        return self.rotation.contains(T.R, tol) and self.translation.contains(T.t, tol)

    def to_json_dict(self) -> dict:
        return {
            "R_bar": self.rotation.center.tolist(),
            "theta": self.rotation.radius,
            "At": self.translation.A.tolist(),
            "bt": self.translation.b.tolist(),
        }

    @staticmethod
    def from_json_dict(dd: dict) -> "DecomposedPoseSet":
        return DecomposedPoseSet(
            RotationBallSet(np.array(dd["R_bar"], dtype=float), float(dd["theta"])),
            HPolytope(np.array(dd["At"], dtype=float), np.array(dd["bt"], dtype=float)),
        )


_ROT_BOX_H = np.hstack([np.vstack([np.eye(9), -np.eye(9)]), np.zeros((18, 3))])
_ROT_BOX_D = np.ones(18)


def _with_rotation_box(H: np.ndarray, d: np.ndarray):
    """Append the always-valid |vec(R)| <= 1 rows (SE(3) members only)."""
    return np.vstack([H, _ROT_BOX_H]), np.concatenate([d, _ROT_BOX_D])


def _pose_lp_polytope(P: PosePolytope) -> HPolytope:
    Hb, db = _with_rotation_box(P.H, P.d)
    return HPolytope(Hb, db)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def forward_uq(
    point_set: HPolytope,
    pose_set: PosePolytope,
    template="box_diag45",
    backend=None,
) -> HPolytope:
    """Guaranteed polytopic enclosure of {R p + t : pose in set, p in set}.

    Per template row the support value is bounded by one certified solve per
    vertex of the point set (the support over a polytope of points is
    attained at a vertex).
    """
    if point_set.empty or pose_set.empty:
        return HPolytope.empty_set(3)
    A2 = template_normals(template, 3)
    verts = vertex_enum(point_set).vertices
    b = np.empty(A2.shape[0])
    retry_rows = None
    for m, a in enumerate(A2):
        best = -np.inf
        for v in verts:
            prob = sdp_relax.build_forward_sdp(v, a, pose_set.H, pose_set.d)
            res = sdp_relax.solve(prob, backend)
            if res.status not in (sdp_relax.STATUS_OPTIMAL, sdp_relax.STATUS_NEAR_OPTIMAL):
                # retry once with translation moment-interval rows appended
                if retry_rows is None:
                    lo, hi = sdp_relax.translation_interval(pose_set.H, pose_set.d)
                    retry_rows = tuple(
                        sdp_relax.moment_interval_rows(13, (9, 10, 11), lo, hi)
                    )
                prob = sdp_relax.build_forward_sdp(
                    v, a, pose_set.H, pose_set.d, extra_inequalities=retry_rows
                )
                res = sdp_relax.solve(prob, backend)
            if res.status not in (sdp_relax.STATUS_OPTIMAL, sdp_relax.STATUS_NEAR_OPTIMAL):
                raise UqError(
                    f"forward solve failed at facet {m}: {res.status} ({res.solver_info})"
                )
            best = max(best, sdp_relax.certified_upper_bound(res))
        b[m] = best
    return HPolytope(A2, b)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward_uq(local: HPolytope, global_set: HPolytope, mode: str = "chebyshev") -> PosePolytope:
    """Pose set consistent with mapping the local set into the global set.

    mode "chebyshev": anchor point = minimal enclosing ball center of the
    local set, offsets inflated by its radius (the unique minimal set on
    this row template).  mode "diameter": anchor = first local vertex,
    offsets inflated by the local diameter (cheaper, looser).
    """
    if local.empty or global_set.empty:
        return PosePolytope.empty_set()
    if mode not in ("chebyshev", "diameter"):
        raise UqError(f"unknown backward mode {mode!r}")
    V = vertex_enum(local)
    if mode == "chebyshev":
        ball = chebyshev_ball(V)
        s, eps = ball.center, ball.radius
    else:
        s, eps = V.vertices[0], diameter(V)
    A2, b2 = global_set.A, global_set.b
    H = np.hstack([A2 @ np.kron(s.reshape(1, 3), np.eye(3)), A2])
    return PosePolytope(H, b2 + eps)


def backward_uq_multi(pairs, mode: str = "chebyshev", prune: bool = True) -> PosePolytope:
    """Conjunction of per-correspondence backward sets (row stacking).

    The true pose lies in every per-pair set, so the stack preserves the
    guarantee; emptiness is a legitimate outcome that signals inconsistent
    correspondences.
    """
    if not pairs:
        raise UqError("no correspondences")
    parts = [backward_uq(lo, gl, mode) for lo, gl in pairs]
    if any(p.empty for p in parts):
        return PosePolytope.empty_set()
    H = np.vstack([p.H for p in parts])
    d = np.concatenate([p.d for p in parts])
    out = PosePolytope(H, d)
    return prune_pose_rows(out) if prune else out


def pose_set_feasible(P: PosePolytope) -> bool:
    """Quick LP feasibility of the pose set (with the rotation box)."""
    if P.empty:
        return False
    from .polytope import feasible_point

    return feasible_point(_pose_lp_polytope(P)) is not None


def prune_pose_rows(P: PosePolytope) -> PosePolytope:
    """LP redundancy removal; empty marker when infeasible.

    The LPs run with the valid |vec(R)| <= 1 box appended, so rows redundant
    for every SE(3) member are dropped even when the raw polyhedron is
    unbounded.  The represented pose set is unchanged.
    """
    if P.empty:
        return P
    from .polytope import feasible_point, remove_redundancy

    boxed = _pose_lp_polytope(P)
    if feasible_point(boxed) is None:
        return PosePolytope.empty_set()
    n_rows = P.H.shape[0]
    pruned = remove_redundancy(boxed)
    # keep only original rows (the box rows were auxiliary)
    keep_H, keep_d = [], []
    for row, off in zip(pruned.A, pruned.b):
        if row[9:].any() or np.abs(np.abs(row[:9]).max() - 1.0) > 1e-12:
            keep_H.append(row)
            keep_d.append(off)
        else:
            # unit rotation-coordinate row: original iff it appeared in P
            match = (np.abs(P.H - row).max(axis=1) < 1e-12) & (np.abs(P.d - off) < 1e-9)
            if match.any():
                keep_H.append(row)
                keep_d.append(off)
    if not keep_H:
        # everything was implied by the rotation box; keep one valid row
        keep_H, keep_d = [P.H[0]], [P.d[0]]
    return PosePolytope(np.array(keep_H), np.array(keep_d))


# ---------------------------------------------------------------------------
# compound
# ---------------------------------------------------------------------------


def compound_direct(
    P1: PosePolytope, P2: PosePolytope, template=None, backend=None
) -> PosePolytope:
    """Guaranteed enclosure of {x(T1 T2)} with per-facet certified solves.

    Default template: the 24 signed coordinate directions of the 12-vector.
    """
    if P1.empty or P2.empty:
        return PosePolytope.empty_set()
    A3 = (
        np.vstack([np.eye(12), -np.eye(12)])
        if template is None
        else template_normals(template, 12)
    )
    tb = (
        sdp_relax.translation_interval(P1.H, P1.d),
        sdp_relax.translation_interval(P2.H, P2.d),
    )
    b = np.empty(A3.shape[0])
    for m, a in enumerate(A3):
        prob = sdp_relax.build_compound_sdp(P1.H, P1.d, P2.H, P2.d, a, t_bounds=tb)
        res = sdp_relax.solve(prob, backend)
        if res.status not in (sdp_relax.STATUS_OPTIMAL, sdp_relax.STATUS_NEAR_OPTIMAL):
            raise UqError(f"compound solve failed at facet {m}: {res.status} ({res.solver_info})")
        b[m] = sdp_relax.certified_upper_bound(res)
    return PosePolytope(A3, b)


def decompose_pose_set(P: PosePolytope, backend=None) -> DecomposedPoseSet:
    """Split a 12D pose polytope into a rotation geodesic ball and a
    translation polytope (both guaranteed outer approximations).

    The rotation ball center comes from the interval-hull midpoint of the
    projected rotation coefficients (any center is valid; the certified
    radius adapts); its radius comes from a certified lower bound on the
    minimal trace alignment over the rotation polytope.
    """
    if P.empty:
        return DecomposedPoseSet(RotationBallSet(np.eye(3), 0.0), HPolytope.empty_set(3))
    boxed = _pose_lp_polytope(P)
    translation = project(boxed, [9, 10, 11])
    rot_poly = project(boxed, list(range(9)))
    if translation.empty or rot_poly.empty:
        return DecomposedPoseSet(RotationBallSet(np.eye(3), 0.0), HPolytope.empty_set(3))
    from .polytope import feasible_point, interval_hull

    lo, hi = interval_hull(rot_poly)
    r_bar_raw = 0.5 * (lo + hi)
    # any center yields a guaranteed set (the certified radius adapts), so
    # degenerate midpoints fall back to an interior point, then identity
    R_bar = None
    for candidate in (r_bar_raw, feasible_point(rot_poly)):
        if candidate is None:
            continue
        try:
            R_bar = project_so3(devec_rotation(candidate))
            break
        except ValueError:
            continue
    if R_bar is None:
        R_bar = np.eye(3)
    prob = sdp_relax.build_rotball_sdp(vec_rotation(R_bar), rot_poly.A, rot_poly.b)
    # the acos conversion takes a square root of the trace slack, so this
    # solve runs at tightened tolerance with a matching small inflation
    res = sdp_relax.solve(prob, backend or _HIGH_ACCURACY_BACKEND)
    if res.status not in (sdp_relax.STATUS_OPTIMAL, sdp_relax.STATUS_NEAR_OPTIMAL):
        raise UqError(f"rotation-ball solve failed: {res.status} ({res.solver_info})")
    c_star = sdp_relax.certified_lower_bound(res, inflation=1e-9 * max(1.0, abs(res.dual_bound)))
    theta = math.acos(np.clip(max((c_star - 1.0) / 2.0, -1.0), -1.0, 1.0))
    return DecomposedPoseSet(RotationBallSet(R_bar, theta), translation)


def inner_max_rotated_dot(a: np.ndarray, v: np.ndarray, theta: float) -> float:
    """Exact max of <Exp(theta' w) a, v> over theta' in [0, theta], unit w.

    Closed form: |v| when the angle between a and v is within theta,
    otherwise |v| cos(angle - theta).
    """
    a = np.asarray(a, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    nv = float(np.linalg.norm(v))
    if nv < 1e-300:
        return 0.0
    ang = math.acos(np.clip(float(a @ v) / nv, -1.0, 1.0))
    if ang <= theta:
        return nv
    return nv * math.cos(ang - theta)


def compound_indirect(
    D1: DecomposedPoseSet, D2: DecomposedPoseSet, template="box_diag45"
) -> DecomposedPoseSet:
    """Decomposed pose compound: rotation radii add exactly; the rotated
    translation polytope is bounded per-direction by the closed-form inner
    maximum over the first rotation ball, then shifted by the first
    translation set (Minkowski sum).

    The translation output keeps the fixed template: its offsets are the
    support values of the exact Minkowski sum (support functions add), so
    the result is the tightest template enclosure of the sum and the
    representation size stays constant under repeated compounding.
    """
    if D1.empty or D2.empty:
        return DecomposedPoseSet(RotationBallSet(np.eye(3), 0.0), HPolytope.empty_set(3))
    R3 = D1.rotation.center @ D2.rotation.center
    theta3 = min(D1.rotation.radius + D2.rotation.radius, np.pi)
    A = template_normals(template, 3)
    verts2 = vertex_enum(D2.translation).vertices
    theta1 = D1.rotation.radius
    b = np.array(
        [max(inner_max_rotated_dot(a, v, theta1) for v in verts2) for a in A]
    )
    rotated = HPolytope(A @ D1.rotation.center.T, b)
    v_rot = vertex_enum(rotated).vertices
    v_t1 = vertex_enum(D1.translation).vertices
    offsets = (v_rot @ A.T).max(axis=0) + (v_t1 @ A.T).max(axis=0)
    return DecomposedPoseSet(RotationBallSet(R3, theta3), HPolytope(A, offsets))


def rotball_to_polytope(B: RotationBallSet, template="box") -> HPolytope:
    """Template enclosure of {vec(R) : dis(R, center) <= radius} via the
    Frobenius-geodesic radius 2 sqrt(2) sin(radius / 2)."""
    rho = 2.0 * np.sqrt(2.0) * np.sin(min(B.radius, np.pi) / 2.0)
    A = template_normals(template, 9)
    return enclose_ellipsoid(Ellipsoid(vec_rotation(B.center), np.eye(9), rho), A)


def decomposed_to_pose_polytope(D: DecomposedPoseSet) -> PosePolytope:
    """Valid 12D H-form covering a decomposed set (block rotation/translation
    rows); used for uniform serialization and membership checks."""
    if D.empty:
        return PosePolytope.empty_set()
    rot = rotball_to_polytope(D.rotation, "box")
    Ht = np.hstack([np.zeros((D.translation.A.shape[0], 9)), D.translation.A])
    Hr = np.hstack([rot.A, np.zeros((rot.A.shape[0], 3))])
    return PosePolytope(np.vstack([Hr, Ht]), np.concatenate([rot.b, D.translation.b]))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_pose_set(
    P,
    n: int,
    seed=0,
    max_proposals: int = 1_000_000,
) -> list[Pose]:
    """Draw n SE(3) members of a pose set (rejection sampling; deterministic
    given seed).  Supports PosePolytope and DecomposedPoseSet inputs.

    Raises:
        UqError: "set too thin to sample" when the acceptance rate stays
        below 1e-4 after ``max_proposals`` proposals.
    """
    rng = np.random.default_rng(seed)
    if isinstance(P, DecomposedPoseSet):
        if P.empty:
            raise UqError("empty set")
        ts = sample_uniform(P.translation, n, rng)
        w = rng.normal(size=(n, 3))
        w /= np.linalg.norm(w, axis=1)[:, None]
        th = rng.uniform(0.0, P.rotation.radius, size=n)
        rots = _kernels.rodrigues_batch(w, th)
        return [Pose(P.rotation.center @ rots[i], ts[i]) for i in range(n)]
    if P.empty:
        raise UqError("empty set")
    from .polytope import feasible_point, interval_hull

    boxed = _pose_lp_polytope(P)
    if feasible_point(boxed) is None:
        raise UqError("empty set")
    lo, hi = interval_hull(boxed)
    width = hi - lo
    center = 0.5 * (lo + hi)
    if width.max() < 1e-10:
        T = Pose(project_so3(devec_rotation(center[:9])), center[9:])
        if not P.contains_pose(T, tol=1e-8):
            raise UqError("degenerate set center is not a pose")
        return [T] * n
    R_c = project_so3(devec_rotation(center[:9]))
    rho = 0.5 * np.linalg.norm(width[:9]) + np.linalg.norm(center[:9] - vec_rotation(R_c))
    theta_hi = min(np.pi, 1.2 * 2.0 * np.arcsin(min(1.0, rho / (2.0 * np.sqrt(2.0)))) + 1e-9)
    t_lo, t_hi = lo[9:].copy(), hi[9:].copy()
    out: list[Pose] = []
    proposals = 0
    batch = 2048
    zero_streak = 0
    Hc = np.ascontiguousarray(P.H)
    dc = np.ascontiguousarray(P.d)
    while len(out) < n:
        w = rng.normal(size=(batch, 3))
        w /= np.linalg.norm(w, axis=1)[:, None]
        th = rng.uniform(0.0, theta_hi, size=batch)
        rots = R_c @ _kernels.rodrigues_batch(w, th)
        ts = rng.uniform(t_lo, t_hi, size=(batch, 3))
        X = np.empty((batch, 12))
        X[:, :9] = rots.transpose(0, 2, 1).reshape(batch, 9)  # column-major vec
        X[:, 9:] = ts
        mask = _kernels.satisfy_mask(Hc, dc, X, 0.0)
        idx = np.where(mask)[0]
        proposals += batch
        for i in idx:
            out.append(Pose(rots[i], ts[i]))
            if len(out) == n:
                break
        if idx.size == 0:
            zero_streak += 1
            theta_hi = max(theta_hi * 0.6, 1e-9)
            if zero_streak % 4 == 0:
                mid = 0.5 * (t_lo + t_hi)
                t_lo = mid + 0.8 * (t_lo - mid)
                t_hi = mid + 0.8 * (t_hi - mid)
        else:
            zero_streak = 0
        if proposals >= max_proposals and len(out) < 1e-4 * proposals:
            raise UqError("set too thin to sample")
    return out[:n]
