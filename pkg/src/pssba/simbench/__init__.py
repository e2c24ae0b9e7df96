"""Synthetic scenes, scanner, pose noise and evaluation metrics."""

from .metrics import APE, ape, occupancy_count
from .scanner import NoiseSpec, generate_frames, perturb_poses
from .scene import (Cylinder, Paraboloid, Plane, Scene, Sine, Sphere, format_scene,
                    parse_scene)
from .suite import SUITE, simulate

__all__ = ["APE", "ape", "occupancy_count", "NoiseSpec", "generate_frames", "perturb_poses",
           "Scene", "Plane", "Paraboloid", "Cylinder", "Sphere", "Sine", "parse_scene",
           "format_scene", "SUITE", "simulate"]
