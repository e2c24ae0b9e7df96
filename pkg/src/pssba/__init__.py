"""LiDAR bundle adjustment with progressive multi-scale surface smoothing."""

from .cloud import Frame
from .geometry import Pose
from .pipeline import PipelineConfig, PipelineReport, run_pss_ba

__version__ = "0.1.0"

__all__ = ["Frame", "Pose", "PipelineConfig", "PipelineReport", "run_pss_ba", "__version__"]
