"""Progressive smooth-then-adjust outer loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .cloud import (Frame, NeighborIndex, build_world_cloud, median_spacing,
                    pca_normals_supported, sample_kernels)
from .geometry import Pose
from .normal_smoothing import smooth_normals
from .pose_adjustment import POINT2PLANE, POLYNOMIAL, SolverConfig, solve_poses
from .surface_fitting import (KernelSet, build_factors, fit_kernels, radial_weight,
                              smooth_cloud, surface_records)

log = logging.getLogger(__name__)

PROGRESSIVE = "progressive"
FIXED = "fixed"


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    gamma_init: float = 3.0
    shrink_k: float = 1.4
    mu: float = 0.05
    t_conv: float = 0.01
    max_frames: int = 100
    gamma_min: float = 0.0          # 0 -> 4x median point spacing of the initial cloud
    gamma_min_factor: float = 4.0
    max_outer_iters: int = 15
    floor_policy: str = "hold"      # hold: keep iterating at gamma_min; stop: terminate there
    residual_mode: str = POLYNOMIAL
    schedule: str = PROGRESSIVE
    rotation_weight: float = 1.0    # metres per radian in the convergence metric
    min_pca_points: int = 5
    support_fraction: float = 1 / 6  # normal support voxel as a fraction of gamma
    min_fit_points: int = 8
    cond_cap: float = 1e8
    beta_init: float = 0.01
    beta_scale: float = 2.0
    beta_max: float = 1e4
    l0_normalize: bool = True
    lm_max_iters: int = 10
    lambda_init: float = 1e-4
    huber: float = 0.0              # 0 disables the robust loss
    weighted_residuals: bool = True

    def validate(self) -> None:
        if self.gamma_init <= 0:
            raise ValueError("gamma_init must be positive")
        if self.schedule not in (PROGRESSIVE, FIXED):
            raise ValueError(f"schedule must be '{PROGRESSIVE}' or '{FIXED}'")
        if self.schedule == PROGRESSIVE and self.shrink_k <= 1:
            raise ValueError("shrink_k must exceed 1 under the progressive schedule")
        if self.residual_mode not in (POLYNOMIAL, POINT2PLANE):
            raise ValueError(f"residual_mode must be '{POLYNOMIAL}' or '{POINT2PLANE}'")
        if self.floor_policy not in ("hold", "stop"):
            raise ValueError("floor_policy must be 'hold' or 'stop'")
        if self.gamma_min < 0:
            raise ValueError("gamma_min must be >= 0 (0 selects the automatic floor)")
        for name in ("mu", "t_conv", "rotation_weight", "huber"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("max_frames", "max_outer_iters", "lm_max_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.min_pca_points < 3:
            raise ValueError("min_pca_points must be >= 3")
        if self.min_fit_points < 5:
            raise ValueError("min_fit_points must be >= 5")
        if not 0 < self.support_fraction <= 1:
            raise ValueError("support_fraction must be in (0, 1]")
        if self.beta_init <= 0 or self.beta_scale <= 1 or self.beta_max < self.beta_init:
            raise ValueError("need beta_init > 0, beta_scale > 1, beta_max >= beta_init")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class IterationRecord:
    iteration: int
    gamma: float
    kernels: int
    factors: int
    rms_before: float
    rms_after: float
    max_update: float
    wall_time: float
    frozen: list = field(default_factory=list)


@dataclass
class PipelineReport:
    poses: list
    iterations: list
    converged: bool
    reason: str
    gamma_min: float
    smoothed: np.ndarray | None = None
    smoothed_frame: np.ndarray | None = None
    surfaces: np.ndarray | None = None

    @property
    def gammas(self) -> list[float]:
        return [r.gamma for r in self.iterations]


def convergence_metric(update_norms, gauge: int | None = 0, rotation_weight: float = 1.0) -> float:
    """max over non-gauge frames of |dt| + w * |dtheta|."""
    u = np.asarray(update_norms, dtype=float).reshape(-1, 2)
    per_frame = u[:, 0] + rotation_weight * u[:, 1]
    if gauge is not None and 0 <= gauge < len(per_frame):
        per_frame = np.delete(per_frame, gauge)
    return float(per_frame.max()) if len(per_frame) else 0.0


def gamma_schedule(config: PipelineConfig, n: int, gamma_min: float = 0.0) -> list[float]:
    """Kernel sizes of the first ``n`` outer iterations, ignoring early convergence.

    Under ``floor_policy='stop'`` the list ends before the first size below ``gamma_min``.
    """
    if config.schedule == FIXED:
        return [config.gamma_init] * n
    out = []
    g = config.gamma_init
    for _ in range(n):
        out.append(g)
        nxt = g / config.shrink_k
        if nxt < gamma_min:
            if config.floor_policy == "stop":
                break
            nxt = min(g, gamma_min)
        g = nxt
    return out


def smoothing_pass(frames: list[Frame], poses: list[Pose], gamma: float,
                   config: PipelineConfig):
    """World cloud, kernel sampling, normals, L0 smoothing and surface fits at one scale."""
    cloud = build_world_cloud(frames, poses)
    pca_normals_supported(cloud, gamma, gamma * config.support_fraction, config.min_pca_points)
    kernel_idx = sample_kernels(cloud.world, gamma, mask=cloud.normal_valid)
    index = NeighborIndex(cloud.world)
    offsets, neighbors = index.radius_batch(cloud.world[kernel_idx], gamma, exclude=kernel_idx)
    # neighbours without a usable normal stay in the fit but not in the normal smoothing
    nb_valid = cloud.normal_valid[neighbors]
    owner = np.repeat(np.arange(len(kernel_idx)), np.diff(offsets))
    l0_offsets = np.zeros_like(offsets)
    np.cumsum(np.bincount(owner[nb_valid], minlength=len(kernel_idx)), out=l0_offsets[1:])
    normals = smooth_normals(cloud.normals[kernel_idx], l0_offsets,
                             cloud.normals[neighbors[nb_valid]], mu=config.mu,
                             beta_init=config.beta_init, beta_scale=config.beta_scale,
                             beta_max=config.beta_max, normalize=config.l0_normalize)
    kernels = fit_kernels(cloud.world, kernel_idx, cloud.frame[kernel_idx], normals, offsets,
                          neighbors, gamma, config.min_fit_points, config.cond_cap)
    return cloud, kernels


def factor_weights(factors, kernels: KernelSet, world: np.ndarray) -> np.ndarray:
    """Squared Gaussian radial weights of each factor at the current poses."""
    d = np.linalg.norm(world[factors.point] - kernels.origin[factors.kernel], axis=1)
    return radial_weight(d, kernels.gamma) ** 2


def run_pss_ba(frames: list[Frame], initial_poses: list[Pose],
               config: PipelineConfig | None = None, final_pass: bool = True) -> PipelineReport:
    """Alternate multi-scale smoothing and pose adjustment until the poses settle."""
    cfg = config or PipelineConfig()
    cfg.validate()
    if not frames:
        raise PipelineError("no frames given")
    if len(frames) > cfg.max_frames:
        raise PipelineError(f"{len(frames)} frames exceed max_frames={cfg.max_frames}")
    if len(frames) != len(initial_poses):
        raise PipelineError(f"{len(frames)} frames but {len(initial_poses)} poses")
    poses = [p.copy() for p in initial_poses]
    gamma_min = cfg.gamma_min
    if gamma_min <= 0:
        gamma_min = cfg.gamma_min_factor * median_spacing(build_world_cloud(frames, poses).world)
    solver_cfg = SolverConfig(max_iters=cfg.lm_max_iters, lambda_init=cfg.lambda_init,
                              huber=cfg.huber or None)

    records: list[IterationRecord] = []
    gamma = cfg.gamma_init
    converged = False
    reason = "max_outer_iters"
    kernels: KernelSet | None = None
    for it in range(1, cfg.max_outer_iters + 1):
        t0 = time.perf_counter()
        cloud, kernels = smoothing_pass(frames, poses, gamma, cfg)
        factors = build_factors(kernels, cloud.frame)
        if len(factors) == 0:
            if it == 1:
                raise PipelineError(f"no usable surface factors at gamma={gamma:.3f} m; "
                                    "scene too sparse for this kernel size")
            reason = "no_factors"
            break
        try:
            w = None
            if cfg.weighted_residuals:
                w = factor_weights(factors, kernels, cloud.world)
            state = solve_poses(factors, kernels, cloud.sensor, poses, solver_cfg,
                                cfg.residual_mode, w)
        except ValueError as exc:
            if it == 1:
                raise PipelineError(str(exc)) from exc
            reason = "no_factors"
            break
        poses = state.poses
        metric = convergence_metric(state.update_norms, 0, cfg.rotation_weight)
        records.append(IterationRecord(it, gamma, int(kernels.valid.sum()), len(factors),
                                       state.initial_rms, state.residual_rms, metric,
                                       time.perf_counter() - t0, state.frozen))
        log.info("iter %d gamma %.3f kernels %d factors %d rms %.4f -> %.4f update %.4g",
                 it, gamma, records[-1].kernels, len(factors), state.initial_rms,
                 state.residual_rms, metric)
        if metric < cfg.t_conv:
            converged = True
            reason = "converged"
            break
        if cfg.schedule == PROGRESSIVE:
            next_gamma = gamma / cfg.shrink_k
            if next_gamma < gamma_min:
                if cfg.floor_policy == "stop":
                    reason = "gamma_min"
                    break
                next_gamma = min(gamma, gamma_min)
            gamma = next_gamma

    report = PipelineReport(poses, records, converged, reason, gamma_min)
    if final_pass:
        cloud, kernels = smoothing_pass(frames, poses, gamma, cfg)
        report.smoothed = smooth_cloud(cloud.world, kernels)
        report.smoothed_frame = cloud.frame.copy()
        report.surfaces = surface_records(kernels)
    return report
