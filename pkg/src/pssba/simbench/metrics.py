"""Trajectory and map-crispness metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Pose


@dataclass
class APE:
    rmse_m: float
    mean_m: float
    max_m: float
    errors: np.ndarray


def ape(estimated: list[Pose], truth: list[Pose], gauge: int | None = 0) -> APE:
    """Absolute position error without alignment; the gauge frame is excluded."""
    if len(estimated) != len(truth):
        raise ValueError(f"trajectory lengths differ: {len(estimated)} vs {len(truth)}")
    err = np.array([np.linalg.norm(a.t - b.t) for a, b in zip(estimated, truth)])
    if gauge is not None and len(err) > 1:
        err = np.delete(err, gauge)
    if len(err) == 0:
        return APE(0.0, 0.0, 0.0, err)
    return APE(float(np.sqrt(np.mean(err ** 2))), float(err.mean()), float(err.max()), err)


def occupancy_count(points, voxel_m: float = 0.1) -> int:
    """Number of distinct occupied voxels (origin-anchored grid, floor binning)."""
    if voxel_m <= 0:
        raise ValueError("voxel size must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return 0
    keys = np.floor(pts / voxel_m).astype(np.int64)
    return int(len(np.unique(keys, axis=0)))
