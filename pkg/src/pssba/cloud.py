"""Point storage with frame ownership, voxel kernel sampling, radius search and PCA normals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, stack_poses


@dataclass
class Frame:
    """One LiDAR scan: sensor-frame points plus frame index and timestamp."""

    frame_index: int
    timestamp: float
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError(f"frame {self.frame_index} has non-finite points")

    def __len__(self):
        return len(self.points)


@dataclass
class WorldCloud:
    """Columnar map points. Row k is one point of frame ``frame[k]``.

    ``world`` is always recomputed from ``sensor`` and the current poses;
    ``normals``/``normal_valid`` are filled in by :func:`pca_normals`.
    """

    world: np.ndarray
    sensor: np.ndarray
    frame: np.ndarray
    origins: np.ndarray
    normals: np.ndarray = field(default=None)
    normal_valid: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.world)
        if self.normals is None:
            self.normals = np.zeros((n, 3))
        if self.normal_valid is None:
            self.normal_valid = np.zeros(n, dtype=bool)

    def __len__(self):
        return len(self.world)


def build_world_cloud(frames: list[Frame], poses: list[Pose]) -> WorldCloud:
    """Project every frame's raw points with its pose, frame-major order."""
    if len(frames) != len(poses):
        raise ValueError(f"{len(frames)} frames but {len(poses)} poses")
    sensor = [f.points for f in frames]
    owner = [np.full(len(f.points), k, dtype=np.int64) for k, f in enumerate(frames)]
    world = [f.points @ p.R.T + p.t for f, p in zip(frames, poses)]
    if not frames:
        empty = np.zeros((0, 3))
        return WorldCloud(empty, empty.copy(), np.zeros(0, dtype=np.int64), empty.copy())
    _, ts = stack_poses(poses)
    return WorldCloud(np.concatenate(world), np.concatenate(sensor),
                      np.concatenate(owner), ts.copy())


def update_world(cloud: WorldCloud, poses: list[Pose]) -> None:
    """Recompute world coordinates in place from the raw sensor points."""
    Rs, ts = stack_poses(poses)
    cloud.world = np.einsum("nij,nj->ni", Rs[cloud.frame], cloud.sensor) + ts[cloud.frame]
    cloud.origins = ts.copy()


class NeighborIndex:
    """Immutable KD-tree over a fixed point array; closed-ball radius queries."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def radius(self, center, r: float, exclude: int | None = None) -> np.ndarray:
        if r <= 0:
            raise ValueError("radius must be positive")
        if self._tree is None:
            return np.zeros(0, dtype=np.int64)
        # cKDTree uses <= r already; a tiny pad guards float rounding at the boundary,
        # then the exact test below enforces the closed ball.
        idx = np.asarray(self._tree.query_ball_point(center, r * (1 + 1e-12) + 1e-15),
                         dtype=np.int64)
        if len(idx):
            d2 = np.sum((self.points[idx] - center) ** 2, axis=1)
            idx = idx[d2 <= r * r]
        idx.sort()
        if exclude is not None:
            idx = idx[idx != exclude]
        return idx

    def radius_batch(self, centers, r: float, exclude=None) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ball queries: (offsets, indices) in CSR layout."""
        centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        if self._tree is None or len(centers) == 0:
            return np.zeros(len(centers) + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
        pairs = cKDTree(centers).sparse_distance_matrix(
            self._tree, r * (1 + 1e-12) + 1e-15, output_type="ndarray")
        owner = pairs["i"].astype(np.int64)
        flat = pairs["j"].astype(np.int64)
        d2 = np.sum((self.points[flat] - centers[owner]) ** 2, axis=1)
        keep = d2 <= r * r
        if exclude is not None:
            exclude = np.asarray(exclude, dtype=np.int64)
            keep &= flat != exclude[owner]
        flat, owner = flat[keep], owner[keep]
        order = np.lexsort((flat, owner))
        flat, owner = flat[order], owner[order]
        offsets = np.zeros(len(centers) + 1, dtype=np.int64)
        np.cumsum(np.bincount(owner, minlength=len(centers)), out=offsets[1:])
        return offsets, flat

    def nearest(self, points) -> np.ndarray:
        _, idx = self._tree.query(np.asarray(points, dtype=float), k=1)
        return np.asarray(idx, dtype=np.int64)


def radius_neighbors(index: NeighborIndex, center, r: float, exclude: int | None = None):
    return index.radius(np.asarray(center, dtype=float), r, exclude=exclude)


def voxel_keys(points: np.ndarray, size: float) -> np.ndarray:
    """Integer voxel coordinates, grid anchored at the origin, floor binning."""
    return np.floor(np.asarray(points, dtype=float) / size).astype(np.int64)


def sample_kernels(points, gamma: float, mask=None) -> np.ndarray:
    """One representative per occupied gamma-voxel: the point closest to the voxel centroid.

    Returns sorted indices into ``points``. ``mask`` restricts the candidates.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    pts = np.asarray(points.world if isinstance(points, WorldCloud) else points, dtype=float)
    cand = np.arange(len(pts)) if mask is None else np.flatnonzero(mask)
    if len(cand) == 0:
        return np.zeros(0, dtype=np.int64)
    p = pts[cand]
    _, inv, counts = np.unique(voxel_keys(p, gamma), axis=0, return_inverse=True,
                               return_counts=True)
    inv = inv.ravel()
    centroid = np.stack([np.bincount(inv, weights=p[:, a]) for a in range(3)], axis=1)
    centroid /= counts[:, None]
    d2 = np.sum((p - centroid[inv]) ** 2, axis=1)
    # per voxel argmin of d2, ties broken by lowest index
    order = np.lexsort((cand, d2, inv))
    first = np.ones(len(order), dtype=bool)
    first[1:] = inv[order][1:] != inv[order][:-1]
    return np.sort(cand[order[first]])


def _pca_from_neighbors(pts, query, offsets, flat):
    """Smallest-eigenvalue eigenvectors of ball covariances (CSR neighbors)."""
    counts = np.diff(offsets)
    owner = np.repeat(np.arange(len(query)), counts)
    q = pts[flat] - query[owner]
    m = np.maximum(counts, 1)[:, None]
    s1 = np.stack([np.bincount(owner, weights=q[:, a], minlength=len(query))
                   for a in range(3)], axis=1) / m
    s2 = np.empty((len(query), 3, 3))
    for a in range(3):
        for b in range(a, 3):
            v = np.bincount(owner, weights=q[:, a] * q[:, b], minlength=len(query)) / m[:, 0]
            s2[:, a, b] = v
            s2[:, b, a] = v
    cov = s2 - s1[:, :, None] * s1[:, None, :]
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def pca_normals(cloud: WorldCloud, index: NeighborIndex, r: float, min_pts: int = 5,
                chunk: int = 4096) -> None:
    """Fill ``cloud.normals`` with PCA normals oriented toward each point's sensor origin.

    ``index`` must be built over ``cloud.world``. Points whose ball holds fewer than
    ``min_pts`` other points are marked invalid.
    """
    if min_pts < 3:
        raise ValueError("min_pts must be at least 3")
    n = len(cloud)
    normals = np.zeros((n, 3))
    valid = np.zeros(n, dtype=bool)
    for start in range(0, n, chunk):
        sl = np.arange(start, min(start + chunk, n))
        offsets, flat = index.radius_batch(cloud.world[sl], r)
        counts = np.diff(offsets) - 1  # ball includes the point itself
        normals[sl] = _pca_from_neighbors(index.points, cloud.world[sl], offsets, flat)
        valid[sl] = counts >= min_pts
    _orient(cloud, normals)
    normals[~valid] = 0.0
    cloud.normals = normals
    cloud.normal_valid = valid


def _orient(cloud: WorldCloud, normals: np.ndarray) -> None:
    to_sensor = cloud.origins[cloud.frame] - cloud.world
    flip = np.einsum("ij,ij->i", normals, to_sensor) < 0
    normals[flip] *= -1.0


def pca_normals_supported(cloud: WorldCloud, r: float, support_voxel: float,
                          min_pts: int = 5) -> None:
    """Coarse-scale PCA normals evaluated on a voxel-thinned support set.

    The support set (nearest-to-centroid per ``support_voxel`` voxel) carries the
    ball covariances; every point takes the normal of its nearest support point,
    re-oriented toward its own sensor. Ball size limits use the support density, so
    ``min_pts`` counts support points.
    """
    support = sample_kernels(cloud.world, support_voxel)
    sup_pts = cloud.world[support]
    sup_index = NeighborIndex(sup_pts)
    offsets, flat = sup_index.radius_batch(sup_pts, r)
    counts = np.diff(offsets) - 1
    sup_normals = _pca_from_neighbors(sup_pts, sup_pts, offsets, flat)
    sup_valid = counts >= min_pts
    nearest = sup_index.nearest(cloud.world)
    normals = sup_normals[nearest].copy()
    valid = sup_valid[nearest]
    _orient(cloud, normals)
    normals[~valid] = 0.0
    cloud.normals = normals
    cloud.normal_valid = valid


def median_spacing(points) -> float:
    """Median nearest-neighbour distance."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(np.median(d[:, 1]))
