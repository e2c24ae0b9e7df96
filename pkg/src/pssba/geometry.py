"""Rotation and rigid-transform helpers shared by the rest of the package."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-8
ROTATION_TOL = 1e-9


def skew(v):
    """Hat operator: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Stack of hat matrices for an (n, 3) array."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def exp_map(axis_angle) -> np.ndarray:
    """Rodrigues formula mapping a rotation vector to a rotation matrix."""
    v = np.asarray(axis_angle, dtype=float)
    th2 = float(v @ v)
    th = np.sqrt(th2)
    W = skew(v)
    if th < SMALL_ANGLE:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / th2
    return np.eye(3) + a * W + b * (W @ W)


def exp_map_batch(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    th2 = np.einsum("...i,...i->...", v, v)
    th = np.sqrt(th2)
    small = th < SMALL_ANGLE
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    W = skew_batch(v)
    return np.eye(3) + a[..., None, None] * W + b[..., None, None] * (W @ W)


def log_map(R) -> np.ndarray:
    """Rotation vector of ``R``; used for evaluation and update norms only."""
    R = np.asarray(R, dtype=float)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    # atan2 keeps full precision near 0 and pi where arccos does not
    th = np.arctan2(0.5 * np.linalg.norm(w), (np.trace(R) - 1.0) * 0.5)
    if th < 1e-6:
        return 0.5 * w
    if np.pi - th < 1e-6:
        # near pi: axis from the symmetric part, u u^T = (S - cos th I) / (1 - cos th)
        c = np.cos(th)
        B = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return th * axis
    return th / (2.0 * np.sin(th)) * w


def quat_to_matrix(q) -> np.ndarray:
    """Matrix from an (x, y, z, w) quaternion; the input is normalized first."""
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """(x, y, z, w) quaternion with w >= 0 (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s,
                      (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s,
                      0.25 * s, (R[1, 0] - R[0, 1]) / s])
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation matrix (SVD projection)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


@dataclass
class Pose:
    """Sensor-to-world rigid transform ``p_world = R @ p_sensor + t``."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        if not np.all(np.isfinite(self.t)):
            raise ValueError("pose translation must be finite")
        if (np.abs(self.R @ self.R.T - np.eye(3)).max() > ROTATION_TOL
                or np.linalg.det(self.R) < 0):
            raise ValueError("pose rotation must be orthonormal with det +1")

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def copy(self) -> "Pose":
        return Pose(self.R.copy(), self.t.copy())


def project_point(pose: Pose, p_sensor) -> np.ndarray:
    """Sensor-frame point(s) to world frame. Accepts (3,) or (n, 3)."""
    p = np.asarray(p_sensor, dtype=float)
    return p @ pose.R.T + pose.t


def stack_poses(poses) -> tuple[np.ndarray, np.ndarray]:
    """(N, 3, 3) rotations and (N, 3) translations."""
    Rs = np.stack([p.R for p in poses]) if poses else np.zeros((0, 3, 3))
    ts = np.stack([p.t for p in poses]) if poses else np.zeros((0, 3))
    return Rs, ts


def unstack_poses(Rs, ts) -> list[Pose]:
    return [Pose(R, t) for R, t in zip(Rs, ts)]


def tangent_basis(n) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors (b0, b1) with (b0, b1, n) a right-handed orthonormal triad.

    b1 = normalize([n_y, -n_x, 0]) with a (0, 1, 0) fallback near ±z, b0 = b1 × n.
    """
    n = np.asarray(n, dtype=float)
    h2 = n[0] * n[0] + n[1] * n[1]
    if h2 < 1e-12:
        b1 = np.array([0.0, 1.0, 0.0]) - n[1] * n
        b1 /= np.linalg.norm(b1)
    else:
        b1 = np.array([n[1], -n[0], 0.0]) / np.sqrt(h2)
    b0 = np.cross(b1, n)
    b0 /= np.linalg.norm(b0)
    return b0, b1


def tangent_basis_batch(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.asarray(n, dtype=float)
    h2 = n[:, 0] ** 2 + n[:, 1] ** 2
    degenerate = h2 < 1e-12
    h = np.sqrt(np.where(degenerate, 1.0, h2))
    b1 = np.stack([n[:, 1] / h, -n[:, 0] / h, np.zeros(len(n))], axis=1)
    if np.any(degenerate):
        nd = n[degenerate]
        fb = np.array([0.0, 1.0, 0.0]) - nd[:, 1:2] * nd
        b1[degenerate] = fb / np.linalg.norm(fb, axis=1, keepdims=True)
    b0 = np.cross(b1, n)
    b0 /= np.linalg.norm(b0, axis=1, keepdims=True)
    return b0, b1


def perturb_normal(n, dphi) -> np.ndarray:
    """Apply a 2-DOF tangent update to a unit normal and renormalize."""
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError("perturb_normal expects a unit normal")
    b0, b1 = tangent_basis(n)
    out = n + b0 * dphi[0] + b1 * dphi[1]
    return out / np.linalg.norm(out)


def angle_between(a, b) -> np.ndarray:
    """Angle in radians between (…, 3) vectors; numerically safe near 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cr = np.linalg.norm(np.cross(a, b), axis=-1)
    dt = np.einsum("...i,...i->...", a, b)
    return np.arctan2(cr, dt)
