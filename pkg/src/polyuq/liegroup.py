"""SO(3)/SE(3) arithmetic: hat/Exp/Log maps, geodesic distance, pose algebra.

All functions are pure and operate on plain numpy arrays; poses are held in
a small immutable :class:`Pose` container.  Rotations are 3x3 orthonormal
matrices with determinant +1, checked (cheaply) where stated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8
_NEAR_PI = 1e-7
_ORTHO_TOL = 1e-10


def hat(s: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, so that hat(s) @ v == cross(s, v)."""
    s = np.asarray(s, dtype=float).reshape(3)
    return np.array(
        [
            [0.0, -s[2], s[1]],
            [s[2], 0.0, -s[0]],
            [-s[1], s[0], 0.0],
        ]
    )


def exp_map(s: np.ndarray) -> np.ndarray:
    """Rotation matrix for the axis-angle vector ``s`` (Rodrigues formula).

    Uses a second-order Taylor branch below ``1e-8`` to avoid 0/0.
    """
    s = np.asarray(s, dtype=float).reshape(3)
    theta = float(np.linalg.norm(s))
    S = hat(s)
    if theta < _SMALL_ANGLE:
        # sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta * theta / 6.0
        c = 0.5 - theta * theta / 24.0
    else:
        a = np.sin(theta) / theta
        c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * S + c * (S @ S)


def log_map(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, with norm in [0, pi].

    Near angle pi the Rodrigues inversion is singular; the axis is then
    extracted from the dominant diagonal of (R + I)/2.
    """
    R = np.asarray(R, dtype=float).reshape(3, 3)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_theta = 0.5 * np.linalg.norm(w)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arctan2(sin_theta, cos_theta))
    if theta < _SMALL_ANGLE:
        # first-order: R ~ I + hat(s)
        return 0.5 * w
    if np.pi - theta < _NEAR_PI:
        A = 0.5 * (R + np.eye(3))
        idx = int(np.argmax(np.diag(A)))
        axis = np.empty(3)
        axis[idx] = np.sqrt(max(A[idx, idx], 0.0))
        denom = max(axis[idx], 1e-12)
        axis[(idx + 1) % 3] = A[idx, (idx + 1) % 3] / denom
        axis[(idx + 2) % 3] = A[idx, (idx + 2) % 3] / denom
        axis /= np.linalg.norm(axis)
        # fix the sign using the off-diagonal antisymmetric part
        if np.dot(w, axis) < 0.0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * sin_theta) * w


def geodesic_distance(R1: np.ndarray, R2: np.ndarray) -> float:
    """Geodesic angle between two rotations, in [0, pi]."""
    t = (np.trace(np.asarray(R1) @ np.asarray(R2).T) - 1.0) / 2.0
    return float(np.arccos(np.clip(t, -1.0, 1.0)))


def is_rotation(R: np.ndarray, tol: float = _ORTHO_TOL) -> bool:
    """True when R is orthonormal with determinant +1 within ``tol``."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (
        np.abs(R.T @ R - np.eye(3)).max() <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


@dataclass(frozen=True)
class Pose:
    """Rigid transformation: p -> R @ p + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


def apply(T: Pose, p: np.ndarray) -> np.ndarray:
    """Rigid action R @ p + t."""
    return T.R @ np.asarray(p, dtype=float).reshape(3) + T.t


def compose(T1: Pose, T2: Pose) -> Pose:
    """Group product: rotation R1 @ R2, translation R1 @ t2 + t1."""
    return Pose(T1.R @ T2.R, T1.R @ T2.t + T1.t)


def inverse(T: Pose) -> Pose:
    return Pose(T.R.T, -(T.R.T @ T.t))


def vectorize_pose(T: Pose) -> np.ndarray:
    """12-vector col(vec(R), t) with column-major vec, so R @ v == (v^T kron I3) vec(R)."""
    return np.concatenate([T.R.reshape(9, order="F"), T.t])


def devectorize_pose(x: np.ndarray) -> Pose:
    """Inverse of :func:`vectorize_pose`; does not project onto SO(3)."""
    x = np.asarray(x, dtype=float).reshape(12)
    return Pose(x[:9].reshape(3, 3, order="F"), x[9:])


def vec_rotation(R: np.ndarray) -> np.ndarray:
    """Column-major 9-vector of a 3x3 matrix."""
    return np.asarray(R, dtype=float).reshape(9, order="F")


def devec_rotation(r: np.ndarray) -> np.ndarray:
    """3x3 matrix from a column-major 9-vector."""
    return np.asarray(r, dtype=float).reshape(3, 3, order="F")


def project_so3(M: np.ndarray) -> np.ndarray:
    """Closest rotation to ``M`` in Frobenius norm, via SVD with sign correction.

    Raises:
        ValueError: if M is numerically rank-deficient ("degenerate projection").
    """
    M = np.asarray(M, dtype=float).reshape(3, 3)
    U, sv, Vt = np.linalg.svd(M)
    if sv[-1] < 1e-12 * max(1.0, sv[0]):
        raise ValueError("degenerate projection")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt
