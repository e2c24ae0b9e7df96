"""The four curved benchmark scenes with their sensor trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cloud import Frame
from ..geometry import Pose, exp_map
from .scanner import generate_frames
from .scene import Cylinder, Paraboloid, Plane, Scene, Sine, Sphere

SUITE = ("paraboloid_hall", "cylinder_tunnel", "sphere_cluster", "sinusoidal_terrain")

# range noise of the pose-recovery benchmark (a Livox-class ~1 cm); fixed-point checks use 0
BENCHMARK_RANGE_NOISE_M = 0.01


def _pose(t, rotvec=(0.0, 0.0, 0.0)) -> Pose:
    return Pose(exp_map(np.asarray(rotvec, dtype=float)), t)


def paraboloid_hall() -> Scene:
    # shallow bowl floor under four umbrella vaults; shells stay > 3 m apart
    vaults = [Paraboloid(_pose((sx * 7.0, sy * 6.0, 15.0)), -0.08, -0.08, (-5.5, 5.5), (-4.5, 4.5))
              for sx in (-1, 1) for sy in (-1, 1)]
    return Scene([Paraboloid(_pose((0, 0, 0)), 0.01, 0.01, (-20, 20), (-20, 20))] + vaults)


def cylinder_tunnel() -> Scene:
    # wide bore with an off-axis domed end cap (breaks the roll symmetry about the bore)
    # and four boulders that keep >= 3 m clear of the wall, each other and the path
    boulders = [(-12, 4, -4.5), (10, -4, -4.5), (-2, 4.2, 4.2), (-10, -4.2, 4.2)]
    return Scene([Cylinder(_pose((0, 0, 0)), 13.0, (-40, 16)), Sphere(_pose((24, 2, 1)), 9.0)]
                 + [Sphere(_pose(c), 4.0) for c in boulders])


def sphere_cluster() -> Scene:
    balls = [(14, 6, 8.0), (-12, 12, 9.0), (-2, -16, 7.0), (-20, -10, 8.0)]
    spheres = [Sphere(_pose((x, y, r + 4.0)), r) for x, y, r in balls]
    return Scene([Plane(_pose((0, 0, 0)), (-40, 40), (-40, 40))] + spheres)


def sinusoidal_terrain() -> Scene:
    return Scene([Sine(_pose((0, 0, 0)), 1.0, 17.0, 13.0, (-45, 45), (-45, 45))])


_SCENES = {
    "paraboloid_hall": paraboloid_hall,
    "cylinder_tunnel": cylinder_tunnel,
    "sphere_cluster": sphere_cluster,
    "sinusoidal_terrain": sinusoidal_terrain,
}

# start, per-frame step, height profile, heading
_PATHS = {
    "paraboloid_hall": ((-5.0, -2.0, 5.0), (0.5, 0.2, 0.0), 0.0),
    "cylinder_tunnel": ((-5.0, -0.5, -1.0), (0.5, 0.05, 0.03), 0.0),
    "sphere_cluster": ((-4.0, -3.5, 3.0), (0.45, 0.3, 0.0), 0.6),
    "sinusoidal_terrain": ((-5.0, -4.0, 5.0), (0.5, 0.35, 0.0), 0.6),
}


def trajectory(name: str, n_frames: int = 20) -> list[Pose]:
    """Smooth ground-truth path: linear drift plus gentle yaw/roll/pitch oscillation."""
    start, step, heading = _PATHS[name]
    start = np.asarray(start)
    step = np.asarray(step)
    poses = []
    for k in range(n_frames):
        u = k / max(n_frames - 1, 1)
        t = start + k * step + np.array([0.0, 0.8 * np.sin(2 * np.pi * u), 0.3 * np.sin(np.pi * u)])
        yaw = heading + 0.35 * np.sin(2 * np.pi * u)
        roll = 0.05 * np.sin(3 * np.pi * u)
        pitch = 0.05 * np.cos(2 * np.pi * u)
        R = exp_map((0, 0, yaw)) @ exp_map((0, pitch, 0)) @ exp_map((roll, 0, 0))
        poses.append(Pose(R, t))
    return poses


def scene(name: str) -> Scene:
    if name not in _SCENES:
        raise KeyError(f"unknown suite scene '{name}'; choose from {', '.join(SUITE)}")
    return _SCENES[name]()


@dataclass
class SimData:
    name: str
    scene: Scene
    truth: list
    frames: list


def simulate(name: str, n_frames: int = 20, points_per_frame: int = 1500, seed: int = 0,
             fov_deg: float = 90.0, max_range_m: float = 40.0,
             range_noise_sigma: float = 0.0) -> SimData:
    sc = scene(name)
    traj = trajectory(name, n_frames)
    frames: list[Frame] = generate_frames(sc, traj, points_per_frame, fov_deg, max_range_m,
                                          seed, range_noise_sigma)
    return SimData(name, sc, traj, frames)
