"""Surface residuals with analytic pose Jacobians and the damped least-squares pose solver.

For factor (kernel k of frame i, neighbour point j of frame j):

    p_S   = M_k (R_j p_j + t_j - R_i p_i - t_i)
    sigma = f_k(x_S, y_S) - z_S                       (polynomial mode)
    sigma = z_S                                       (point2plane mode)

Rotations are perturbed on the left, ``R <- Exp(dtheta) R``; translations additively.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, exp_map_batch, log_map, stack_poses, unstack_poses
from .surface_fitting import FactorSet, KernelSet

log = logging.getLogger(__name__)

POLYNOMIAL = "polynomial"
POINT2PLANE = "point2plane"


@dataclass
class ResidualEvaluation:
    sigma: float
    J_ti: np.ndarray
    J_thetai: np.ndarray
    J_tj: np.ndarray
    J_thetaj: np.ndarray


@dataclass
class SolverConfig:
    max_iters: int = 10
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    rel_tol: float = 1e-6
    huber: float | None = None
    gauge_frame: int = 0


@dataclass
class SolverState:
    poses: list
    damping: float
    residual_rms: float
    initial_rms: float
    update_norms: np.ndarray
    iterations: int
    frozen: list = field(default_factory=list)
    cost_history: list = field(default_factory=list)


def _residuals(alpha, M, q_i, t_i, q_j, t_j, mode):
    d = q_j + t_j - q_i - t_i
    p = np.einsum("nij,nj->ni", M, d)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    if mode == POINT2PLANE:
        return z, None
    a = alpha
    f = a[:, 0] * x * x + a[:, 1] * y * y + a[:, 2] * x * y + a[:, 3] * x + a[:, 4] * y
    return f - z, p


def evaluate_batch(factors: FactorSet, kernels: KernelSet, sensor: np.ndarray, Rs, ts,
                   mode: str = POLYNOMIAL, jacobians: bool = True):
    """Residuals (F,) and, optionally, Jacobian blocks (F, 3) x 4 for all factors.

    Returns ``(sigma, J_ti, J_thetai, J_tj, J_thetaj)``; blocks are ``None`` when
    ``jacobians`` is false.
    """
    k = factors.kernel
    fi, fj = factors.frame_i, factors.frame_j
    q_i = np.einsum("nij,nj->ni", Rs[fi], sensor[kernels.point_index[k]])
    q_j = np.einsum("nij,nj->ni", Rs[fj], sensor[factors.point])
    M = kernels.M[k]
    alpha = kernels.alpha[k]
    sigma, p = _residuals(alpha, M, q_i, ts[fi], q_j, ts[fj], mode)
    if not jacobians:
        return sigma, None, None, None, None
    if mode == POINT2PLANE:
        g = np.zeros((len(k), 3))
        g[:, 2] = 1.0
    else:
        x, y = p[:, 0], p[:, 1]
        g = np.stack([2 * alpha[:, 0] * x + alpha[:, 2] * y + alpha[:, 3],
                      2 * alpha[:, 1] * y + alpha[:, 2] * x + alpha[:, 4],
                      -np.ones(len(k))], axis=1)
    u = np.einsum("ni,nij->nj", g, M)      # d sigma / d p_j^W
    J_tj = u
    J_ti = -u
    J_thj = -np.cross(u, q_j)              # -u [q_j]x
    J_thi = np.cross(u, q_i)               #  u [q_i]x
    return sigma, J_ti, J_thi, J_tj, J_thj


def _single(factors, kernels, sensor, poses, gauge, mode):
    Rs, ts = stack_poses(poses)
    s, a, b, c, d = evaluate_batch(factors, kernels, sensor, Rs, ts, mode)
    blocks = [a[0], b[0], c[0], d[0]]
    if factors.frame_i[0] == gauge:
        blocks[0] = np.zeros(3)
        blocks[1] = np.zeros(3)
    if factors.frame_j[0] == gauge:
        blocks[2] = np.zeros(3)
        blocks[3] = np.zeros(3)
    return ResidualEvaluation(float(s[0]), *blocks)


def _one_factor(factors: FactorSet, index: int) -> FactorSet:
    sl = slice(index, index + 1)
    return FactorSet(factors.kernel[sl], factors.point[sl], factors.frame_i[sl],
                     factors.frame_j[sl])


def evaluate_residual(factors: FactorSet, index: int, poses, kernels: KernelSet,
                      sensor: np.ndarray, gauge: int | None = 0) -> ResidualEvaluation:
    """Polynomial residual and Jacobian blocks of one factor; gauge-frame blocks zeroed."""
    if not kernels.valid[factors.kernel[index]]:
        raise ValueError("factor refers to an invalid kernel")
    return _single(_one_factor(factors, index), kernels, sensor, poses, gauge, POLYNOMIAL)


def evaluate_point2plane(factors: FactorSet, index: int, poses, kernels: KernelSet,
                         sensor: np.ndarray, gauge: int | None = 0) -> ResidualEvaluation:
    """Signed distance of the neighbour from the kernel's tangent plane."""
    if not kernels.valid[factors.kernel[index]]:
        raise ValueError("factor refers to an invalid kernel")
    return _single(_one_factor(factors, index), kernels, sensor, poses, gauge, POINT2PLANE)


def _robust_weights(sigma, huber, weights):
    if huber is None:
        return weights
    a = np.abs(sigma)
    hw = np.where(a <= huber, 1.0, huber / np.maximum(a, 1e-300))
    return hw if weights is None else hw * weights


def _cost(sigma, huber, weights=None):
    if huber is None:
        c = sigma * sigma
    else:
        a = np.abs(sigma)
        c = np.where(a <= huber, a * a, 2 * huber * a - huber * huber)
    return float(np.sum(c if weights is None else c * weights))


class _Assembler:
    """Accumulates J^T J and J^T r over factors grouped by their (frame_i, frame_j) pair."""

    def __init__(self, factors: FactorSet, columns: np.ndarray, n_free: int):
        self.columns = columns
        self.n = 6 * n_free
        key = factors.frame_i * (len(columns) + 1) + factors.frame_j
        self.order = np.argsort(key, kind="stable")
        sk = key[self.order]
        cuts = np.flatnonzero(np.diff(sk)) + 1
        self.starts = np.concatenate([[0], cuts])
        self.stops = np.concatenate([cuts, [len(sk)]])
        self.fi = factors.frame_i[self.order[self.starts]] if len(sk) else np.zeros(0, int)
        self.fj = factors.frame_j[self.order[self.starts]] if len(sk) else np.zeros(0, int)

    def build(self, sigma, J_ti, J_thi, J_tj, J_thj, weights=None):
        H = np.zeros((self.n, self.n))
        g = np.zeros(self.n)
        Ji = np.hstack([J_ti, J_thi])[self.order]
        Jj = np.hstack([J_tj, J_thj])[self.order]
        r = sigma[self.order]
        if weights is not None:
            sw = np.sqrt(weights[self.order])
            Ji *= sw[:, None]
            Jj *= sw[:, None]
            r = r * sw
        for s, e, fi, fj in zip(self.starts, self.stops, self.fi, self.fj):
            ci, cj = self.columns[fi], self.columns[fj]
            if fi == fj:
                if ci < 0:
                    continue
                J = Ji[s:e] + Jj[s:e]
                H[ci:ci + 6, ci:ci + 6] += J.T @ J
                g[ci:ci + 6] += J.T @ r[s:e]
                continue
            A, B, rr = Ji[s:e], Jj[s:e], r[s:e]
            if ci >= 0:
                H[ci:ci + 6, ci:ci + 6] += A.T @ A
                g[ci:ci + 6] += A.T @ rr
            if cj >= 0:
                H[cj:cj + 6, cj:cj + 6] += B.T @ B
                g[cj:cj + 6] += B.T @ rr
            if ci >= 0 and cj >= 0:
                C = A.T @ B
                H[ci:ci + 6, cj:cj + 6] += C
                H[cj:cj + 6, ci:ci + 6] += C.T
        return H, g


def _apply(Rs, ts, delta, columns):
    Rs = Rs.copy()
    ts = ts.copy()
    free = np.flatnonzero(columns >= 0)
    if len(free):
        d = delta.reshape(-1, 6)
        idx = columns[free] // 6
        ts[free] += d[idx, :3]
        Rs[free] = exp_map_batch(d[idx, 3:]) @ Rs[free]
    return Rs, ts


def update_norms(before: list[Pose], after: list[Pose]) -> np.ndarray:
    """Per-frame (|dt|, |dtheta|) between two pose lists."""
    out = np.zeros((len(before), 2))
    for k, (a, b) in enumerate(zip(before, after)):
        out[k, 0] = np.linalg.norm(b.t - a.t)
        out[k, 1] = np.linalg.norm(log_map(b.R @ a.R.T))
    return out


def solve_poses(factors: FactorSet, kernels: KernelSet, sensor: np.ndarray, poses: list[Pose],
                config: SolverConfig | None = None, mode: str = POLYNOMIAL,
                weights: np.ndarray | None = None) -> SolverState:
    """Levenberg-Marquardt over all non-gauge poses with kernels held fixed.

    Frames that no factor touches are frozen and reported; raises ``ValueError`` if
    every non-gauge frame is frozen.
    """
    cfg = config or SolverConfig()
    nframes = len(poses)
    gauge = cfg.gauge_frame
    touched = np.zeros(nframes, dtype=bool)
    touched[factors.frame_i] = True
    touched[factors.frame_j] = True
    frozen = [f for f in range(nframes) if f != gauge and not touched[f]]
    if frozen:
        log.warning("frames %s appear in no factor; frozen for this solve", frozen)
    free = [f for f in range(nframes) if f != gauge and touched[f]]
    if not free:
        raise ValueError("no free frame is constrained by any factor")
    columns = np.full(nframes, -1, dtype=np.int64)
    columns[free] = 6 * np.arange(len(free))
    asm = _Assembler(factors, columns, len(free))

    Rs, ts = stack_poses(poses)
    sigma, *J = evaluate_batch(factors, kernels, sensor, Rs, ts, mode)
    cost = _cost(sigma, cfg.huber, weights)
    initial_rms = float(np.sqrt(np.mean(sigma ** 2))) if len(sigma) else 0.0
    history = [cost]
    lam = cfg.lambda_init
    iters = 0
    need_build = True
    for iters in range(1, cfg.max_iters + 1):
        if need_build:
            H, g = asm.build(sigma, *J, weights=_robust_weights(sigma, cfg.huber, weights))
            diag = np.diag(H).copy()
            floor = 1e-12 * max(float(diag.max()), 1.0)
            need_build = False
        accepted = False
        while lam < 1e12:
            Hd = H + np.diag(lam * np.maximum(diag, floor))
            try:
                delta = -np.linalg.solve(Hd, g)
            except np.linalg.LinAlgError:
                delta = -np.linalg.lstsq(Hd, g, rcond=None)[0]
            Rn, tn = _apply(Rs, ts, delta, columns)
            s_new, *_ = evaluate_batch(factors, kernels, sensor, Rn, tn, mode, jacobians=False)
            c_new = _cost(s_new, cfg.huber, weights)
            if c_new <= cost:
                accepted = True
                break
            lam *= cfg.lambda_up
        if not accepted:
            break
        rel = (cost - c_new) / max(cost, 1e-300)
        Rs, ts, cost = Rn, tn, c_new
        history.append(cost)
        lam = max(lam * cfg.lambda_down, 1e-12)
        sigma, *J = evaluate_batch(factors, kernels, sensor, Rs, ts, mode)
        need_build = True
        if rel < cfg.rel_tol:
            break
    new_poses = unstack_poses(Rs, ts)
    new_poses[gauge] = poses[gauge].copy()
    rms = float(np.sqrt(np.mean(sigma ** 2))) if len(sigma) else 0.0
    return SolverState(new_poses, lam, rms, initial_rms, update_norms(poses, new_poses),
                       iters, frozen, history)
