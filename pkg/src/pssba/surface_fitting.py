"""Tangent frames, weighted quadratic surface fits per kernel, point smoothing and factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import tangent_basis, tangent_basis_batch

MIN_FIT_POINTS = 8
COND_CAP = 1e8


@dataclass
class TangentFrame:
    """Rows of ``M`` are (b0, b1, n); ``M @ (p - origin)`` maps world to tangent coordinates."""

    M: np.ndarray
    origin: np.ndarray


def basis_of_normal(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError("basis_of_normal expects a unit normal")
    b0, b1 = tangent_basis(n)
    return np.stack([b0, b1, n])


def basis_of_normals(n: np.ndarray) -> np.ndarray:
    """(K, 3, 3) stack of tangent frames for (K, 3) unit normals."""
    b0, b1 = tangent_basis_batch(n)
    return np.stack([b0, b1, n], axis=1)


def to_tangent(frame: TangentFrame, p_world) -> np.ndarray:
    return (np.asarray(p_world, dtype=float) - frame.origin) @ frame.M.T


def from_tangent(frame: TangentFrame, p_tangent) -> np.ndarray:
    return np.asarray(p_tangent, dtype=float) @ frame.M + frame.origin


def radial_weight(d, gamma: float):
    """Gaussian radial weight exp(-d^2 / gamma^2)."""
    d = np.asarray(d, dtype=float)
    return np.exp(-(d * d) / (gamma * gamma))


def design_matrix(x, y) -> np.ndarray:
    """Columns x^2, y^2, xy, x, y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.stack([x * x, y * y, x * y, x, y], axis=-1)


def surface_value(alpha, x, y):
    return design_matrix(x, y) @ np.asarray(alpha, dtype=float)


def surface_gradient(alpha, x, y) -> np.ndarray:
    """d(f - z)/d(x, y, z) = [2a0 x + a2 y + a3, 2a1 y + a2 x + a4, -1]."""
    a = np.asarray(alpha, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.stack([2 * a[..., 0] * x + a[..., 2] * y + a[..., 3],
                     2 * a[..., 1] * y + a[..., 2] * x + a[..., 4],
                     -np.ones_like(x)], axis=-1)


def _equilibrated_cond(N: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.abs(np.diagonal(N, axis1=-2, axis2=-1)))
    d = np.where(d > 0, d, 1.0)
    S = N / (d[..., :, None] * d[..., None, :])
    return np.linalg.cond(S)


def fit_surface(tangent_points, gamma: float, min_points: int = MIN_FIT_POINTS,
                cond_cap: float = COND_CAP) -> tuple[np.ndarray, bool]:
    """Weighted least-squares quadratic through the tangent origin.

    Minimizes sum_j ((f(x_j, y_j) - z_j) * w(|p_j|))^2, i.e. squared weights in the
    normal equations. Returns (alpha, valid); invalid fits return zeros. The
    condition number is measured after symmetric diagonal scaling so that it does
    not depend on the kernel size.
    """
    p = np.asarray(tangent_points, dtype=float).reshape(-1, 3)
    if len(p) < min_points:
        return np.zeros(5), False
    w2 = radial_weight(np.linalg.norm(p, axis=1), gamma) ** 2
    A = design_matrix(p[:, 0], p[:, 1])
    N = A.T @ (A * w2[:, None])
    r = A.T @ (w2 * p[:, 2])
    if not np.all(np.isfinite(N)) or _equilibrated_cond(N) > cond_cap:
        return np.zeros(5), False
    return np.linalg.solve(N, r), True


def smooth_points(frame: TangentFrame, alpha, tangent_points) -> np.ndarray:
    """Replace tangent z by f(x, y) and map back to world coordinates."""
    p = np.array(tangent_points, dtype=float).reshape(-1, 3)
    p[:, 2] = surface_value(alpha, p[:, 0], p[:, 1])
    return from_tangent(frame, p)


@dataclass
class SmoothingKernel:
    kernel_point_index: int
    frame_index: int
    tangent: TangentFrame
    alpha: np.ndarray
    neighbors: np.ndarray
    fit_rms: float
    valid: bool


@dataclass
class KernelSet:
    """All kernels of one smoothing pass; neighbour sets in CSR layout."""

    point_index: np.ndarray
    frame_index: np.ndarray
    origin: np.ndarray
    M: np.ndarray
    alpha: np.ndarray
    offsets: np.ndarray
    neighbors: np.ndarray
    fit_rms: np.ndarray
    valid: np.ndarray
    gamma: float

    def __len__(self):
        return len(self.point_index)

    def neighbor_set(self, k: int) -> np.ndarray:
        return self.neighbors[self.offsets[k]:self.offsets[k + 1]]

    def kernel(self, k: int) -> SmoothingKernel:
        return SmoothingKernel(int(self.point_index[k]), int(self.frame_index[k]),
                               TangentFrame(self.M[k], self.origin[k]), self.alpha[k],
                               self.neighbor_set(k), float(self.fit_rms[k]), bool(self.valid[k]))

    @property
    def owner(self) -> np.ndarray:
        return np.repeat(np.arange(len(self)), np.diff(self.offsets))


def fit_kernels(world: np.ndarray, point_index, frame_index, normals, offsets, neighbors,
                gamma: float, min_points: int = MIN_FIT_POINTS,
                cond_cap: float = COND_CAP) -> KernelSet:
    """Batched tangent frames and surface fits (same maths as :func:`fit_surface`)."""
    point_index = np.asarray(point_index, dtype=np.int64)
    K = len(point_index)
    origin = world[point_index]
    M = basis_of_normals(np.asarray(normals, dtype=float).reshape(-1, 3))
    counts = np.diff(offsets)
    owner = np.repeat(np.arange(K), counts)
    p = np.einsum("nij,nj->ni", M[owner], world[neighbors] - origin[owner])
    w2 = radial_weight(np.linalg.norm(p, axis=1), gamma) ** 2
    A = design_matrix(p[:, 0], p[:, 1])
    N = np.empty((K, 5, 5))
    r = np.empty((K, 5))
    for a in range(5):
        r[:, a] = np.bincount(owner, weights=w2 * A[:, a] * p[:, 2], minlength=K)
        for b in range(a, 5):
            v = np.bincount(owner, weights=w2 * A[:, a] * A[:, b], minlength=K)
            N[:, a, b] = v
            N[:, b, a] = v
    valid = counts >= min_points
    if K:
        ok = np.all(np.isfinite(N.reshape(K, -1)), axis=1)
        valid &= ok
        cond = np.full(K, np.inf)
        if np.any(valid):
            cond[valid] = _equilibrated_cond(N[valid])
        valid &= cond <= cond_cap
    alpha = np.zeros((K, 5))
    if np.any(valid):
        alpha[valid] = np.linalg.solve(N[valid], r[valid][..., None])[..., 0]
    res = np.einsum("ij,ij->i", A, alpha[owner]) - p[:, 2]
    fit_rms = np.sqrt(np.bincount(owner, weights=res * res, minlength=K) / np.maximum(counts, 1))
    return KernelSet(point_index, np.asarray(frame_index, dtype=np.int64), origin, M, alpha,
                     np.asarray(offsets, dtype=np.int64), np.asarray(neighbors, dtype=np.int64),
                     fit_rms, valid, float(gamma))


def smooth_cloud(world: np.ndarray, kernels: KernelSet) -> np.ndarray:
    """Smoothed copy of ``world``: each point projected onto the surface of its
    highest-weight (closest) valid kernel; points outside every valid kernel are copied."""
    out = np.array(world, dtype=float, copy=True)
    owner = kernels.owner
    keep = kernels.valid[owner]
    owner = owner[keep]
    nb = kernels.neighbors[keep]
    if len(nb) == 0:
        return out
    p = np.einsum("nij,nj->ni", kernels.M[owner], world[nb] - kernels.origin[owner])
    d2 = np.sum(p * p, axis=1)
    order = np.lexsort((owner, d2, nb))
    first = np.ones(len(order), dtype=bool)
    first[1:] = nb[order][1:] != nb[order][:-1]
    sel = order[first]
    q = p[sel].copy()
    q[:, 2] = np.einsum("ij,ij->i", design_matrix(q[:, 0], q[:, 1]), kernels.alpha[owner[sel]])
    out[nb[sel]] = np.einsum("nji,nj->ni", kernels.M[owner[sel]], q) + kernels.origin[owner[sel]]
    return out


@dataclass
class FactorSet:
    """Residual associations (kernel k, neighbour point j) as parallel arrays."""

    kernel: np.ndarray
    point: np.ndarray
    frame_i: np.ndarray
    frame_j: np.ndarray

    def __len__(self):
        return len(self.kernel)


def build_factors(kernels: KernelSet, point_frame: np.ndarray) -> FactorSet:
    """One factor per (valid kernel, neighbour) pair, kernel-major order.

    The kernel's own point is never a factor: its tangent coordinates are zero and
    the residual vanishes identically.
    """
    owner = kernels.owner
    nb = kernels.neighbors
    keep = kernels.valid[owner] & (nb != kernels.point_index[owner])
    owner, nb = owner[keep], nb[keep]
    point_frame = np.asarray(point_frame, dtype=np.int64)
    return FactorSet(owner, nb, kernels.frame_index[owner], point_frame[nb])


SURFACE_HEADER = ("ox oy oz m00 m01 m02 m10 m11 m12 m20 m21 m22 "
                  "a0 a1 a2 a3 a4 gamma")


def surface_records(kernels: KernelSet) -> np.ndarray:
    v = kernels.valid
    return np.hstack([kernels.origin[v], kernels.M[v].reshape(-1, 9), kernels.alpha[v],
                      np.full((int(v.sum()), 1), kernels.gamma)])
