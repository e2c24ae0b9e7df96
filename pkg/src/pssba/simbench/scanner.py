"""Randomized spherical-pattern LiDAR simulator and pose-noise injection."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..cloud import Frame
from ..geometry import Pose, exp_map
from .scene import Scene, Sine

log = logging.getLogger(__name__)

FRAME_RATE_HZ = 10.0


def scan_directions(rng: np.random.Generator, n: int, fov_deg: float) -> np.ndarray:
    """Unit ray directions in the sensor frame: full azimuth, elevation within
    +/- fov/2, uniform over that spherical band."""
    half = np.radians(fov_deg) / 2
    az = rng.uniform(0.0, 2 * np.pi, n)
    sin_el = rng.uniform(np.sin(-half), np.sin(half), n)
    cos_el = np.sqrt(1.0 - sin_el ** 2)
    return np.stack([cos_el * np.cos(az), cos_el * np.sin(az), sin_el], axis=1)


def generate_frames(scene: Scene, trajectory: list[Pose], points_per_frame: int = 2000,
                    fov_deg: float = 90.0, max_range_m: float = 40.0, seed: int = 0,
                    range_noise_sigma: float = 0.0, min_range_m: float = 0.5) -> list[Frame]:
    """Cast ``points_per_frame`` rays per pose; the nearest hit within range becomes a point.

    Points are stored in the sensor frame. Missed rays are dropped, so frames may be
    smaller than ``points_per_frame`` (an empty frame only triggers a warning).
    """
    if not trajectory:
        raise ValueError("trajectory is empty")
    for patch in scene.patches:
        if isinstance(patch, Sine):
            patch.max_range = max_range_m
    rng = np.random.default_rng(seed)
    frames = []
    for k, pose in enumerate(trajectory):
        d_sensor = scan_directions(rng, points_per_frame, fov_deg)
        d_world = d_sensor @ pose.R.T
        s = scene.intersect(pose.t, d_world)
        hit = np.isfinite(s) & (s <= max_range_m) & (s >= min_range_m)
        rng_s = s[hit]
        if range_noise_sigma > 0:
            rng_s = rng_s + rng.normal(0.0, range_noise_sigma, len(rng_s))
        pts = rng_s[:, None] * d_sensor[hit]
        if len(pts) == 0:
            log.warning("frame %d has no returns", k)
        frames.append(Frame(k, k / FRAME_RATE_HZ, pts))
    return frames


@dataclass
class NoiseSpec:
    trans_sigma: float = 0.2
    rot_sigma_deg: float = 1.0
    mode: str = "independent"
    range_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.trans_sigma < 0 or self.rot_sigma_deg < 0 or self.range_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.mode not in ("independent", "random_walk"):
            raise ValueError("mode must be 'independent' or 'random_walk'")


def random_axes(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def perturb_poses(poses: list[Pose], spec: NoiseSpec) -> list[Pose]:
    """Gaussian pose noise; frame 0 is never perturbed.

    Translation: per-axis N(0, trans_sigma^2). Rotation: ``Exp(axis * angle) R`` with a
    uniform axis and angle ~ N(0, rot_sigma^2). ``random_walk`` accumulates increments.
    """
    rng = np.random.default_rng(spec.seed)
    n = len(poses)
    dt = rng.normal(0.0, spec.trans_sigma, size=(n, 3)) if spec.trans_sigma > 0 else np.zeros((n, 3))
    axes = random_axes(rng, n)
    ang = rng.normal(0.0, np.radians(spec.rot_sigma_deg), size=n) if spec.rot_sigma_deg > 0 \
        else np.zeros(n)
    dt[0] = 0.0
    ang[0] = 0.0
    out = [poses[0].copy()] if n else []
    acc_t = np.zeros(3)
    acc_R = np.eye(3)
    for k in range(1, n):
        dR = exp_map(axes[k] * ang[k])
        if spec.mode == "random_walk":
            acc_t = acc_t + dt[k]
            acc_R = dR @ acc_R
            out.append(Pose(acc_R @ poses[k].R, poses[k].t + acc_t))
        else:
            out.append(Pose(dR @ poses[k].R, poses[k].t + dt[k]))
    return out
