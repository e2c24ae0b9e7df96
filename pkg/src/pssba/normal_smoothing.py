"""L0-regularized refinement of kernel normals (auxiliary-variable half-quadratic scheme).

For a kernel normal ``n`` with initial estimate ``n0`` and neighbour normals ``m_j``:

    G(n) = 1 - n.n0 + mu * |D(n)|_0,     D(n)_j = 1 - n.m_j

is minimized by alternating a hard threshold on the auxiliary vector ``Xi`` with a
Gauss-Newton step on ``1 - n.n0 + beta * |D(n) - Xi|^2`` over the 2-DOF tangent
update of ``n``, doubling ``beta`` each round.

With ``normalize=True`` (default) both neighbour terms are divided by the neighbour
count. The threshold ``mu / beta`` is unchanged by that scaling; only the relative
pull of the data term versus the neighbours becomes independent of density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import perturb_normal, tangent_basis, tangent_basis_batch

MAX_BACKTRACK = 8


@dataclass
class NormalProblem:
    kernel_normal: np.ndarray
    neighbor_normals: np.ndarray
    mu: float = 0.05
    beta_init: float = 0.01
    beta_scale: float = 2.0
    beta_max: float = 1e4
    min_update: float = 1e-4
    normalize: bool = True

    def __post_init__(self):
        self.kernel_normal = np.asarray(self.kernel_normal, dtype=float).reshape(3)
        self.neighbor_normals = np.asarray(self.neighbor_normals, dtype=float).reshape(-1, 3)
        if abs(np.linalg.norm(self.kernel_normal) - 1) > 1e-6:
            raise ValueError("kernel normal must be unit length")
        if len(self.neighbor_normals) and np.any(
                np.abs(np.linalg.norm(self.neighbor_normals, axis=1) - 1) > 1e-6):
            raise ValueError("neighbour normals must be unit length")
        if self.mu < 0 or self.beta_init <= 0 or self.beta_scale <= 1:
            raise ValueError("need mu >= 0, beta_init > 0, beta_scale > 1")

    @property
    def weight(self) -> float:
        m = len(self.neighbor_normals)
        return 1.0 / m if (self.normalize and m) else 1.0


def differentials(n, neighbor_normals) -> np.ndarray:
    return 1.0 - np.asarray(neighbor_normals) @ np.asarray(n)


def threshold_step(D, mu: float, beta: float) -> np.ndarray:
    """Closed-form auxiliary update: zero where mu/beta > D^2, keep D otherwise."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    D = np.asarray(D, dtype=float)
    return np.where(mu / beta > D * D, 0.0, D)


def objective(problem: NormalProblem, n, Xi, beta: float) -> float:
    """Half-quadratic objective 1 - n.n0 + beta * w * |D(n) - Xi|^2."""
    r = differentials(n, problem.neighbor_normals) - Xi
    return float(1.0 - n @ problem.kernel_normal + beta * problem.weight * (r @ r))


def _normal_equations(problem, Xi, beta, n):
    b0, b1 = tangent_basis(n)
    B = np.stack([b0, b1], axis=1)
    a = problem.neighbor_normals @ B                      # (m, 2)
    c = differentials(n, problem.neighbor_normals) - Xi   # (m,)
    s = 2.0 * beta * problem.weight
    A = np.eye(2) + s * (a.T @ a)
    rhs = B.T @ problem.kernel_normal + s * (a.T @ c)
    return A, rhs


def objective_gradient(problem: NormalProblem, Xi, beta: float, n) -> np.ndarray:
    """Gradient of :func:`objective` w.r.t. the tangent update at ``n``."""
    _, rhs = _normal_equations(problem, Xi, beta, n)
    return -rhs


def quadratic_step(problem: NormalProblem, Xi, beta: float, n_current) -> tuple[np.ndarray, bool]:
    """One Gauss-Newton step with fixed ``Xi``. Returns (normal, ok).

    The step is halved until the objective does not increase; a degenerate 2x2
    system returns ``n_current`` with ``ok=False``.
    """
    n_current = np.asarray(n_current, dtype=float)
    Xi = np.asarray(Xi, dtype=float)
    if len(Xi) != len(problem.neighbor_normals):
        raise ValueError("Xi must have one entry per neighbour")
    A, rhs = _normal_equations(problem, Xi, beta, n_current)
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e12:
        return n_current, False
    dphi = np.linalg.solve(A, rhs)
    g0 = objective(problem, n_current, Xi, beta)
    for _ in range(MAX_BACKTRACK):
        cand = perturb_normal(n_current, dphi)
        if objective(problem, cand, Xi, beta) <= g0:
            return cand, True
        dphi = 0.5 * dphi
    return n_current, True


def smooth_normal(problem: NormalProblem, betas: list | None = None) -> np.ndarray:
    """Alternate threshold and quadratic steps from ``n = n0`` with beta doubling.

    Stops once beta exceeds ``beta_max`` or the normal moves less than
    ``min_update`` radians in a round. ``betas`` (if given) collects the schedule.
    """
    n = problem.kernel_normal.copy()
    if len(problem.neighbor_normals) == 0:
        return n
    beta = problem.beta_init
    while beta <= problem.beta_max:
        if betas is not None:
            betas.append(beta)
        Xi = threshold_step(differentials(n, problem.neighbor_normals), problem.mu, beta)
        n_new, _ = quadratic_step(problem, Xi, beta, n)
        moved = np.arctan2(np.linalg.norm(np.cross(n, n_new)), n @ n_new)
        n = n_new
        if moved < problem.min_update:
            break
        beta *= problem.beta_scale
    return n


def smooth_normals(kernel_normals, offsets, neighbor_normals, mu: float = 0.05,
                   beta_init: float = 0.01, beta_scale: float = 2.0, beta_max: float = 1e4,
                   min_update: float = 1e-4, normalize: bool = True) -> np.ndarray:
    """Vectorized :func:`smooth_normal` over many kernels.

    ``neighbor_normals`` is flattened in CSR order given by ``offsets``; each kernel
    follows exactly the per-kernel schedule and stops independently.
    """
    n = np.array(kernel_normals, dtype=float, copy=True).reshape(-1, 3)
    n0 = n.copy()
    K = len(n)
    counts = np.diff(offsets)
    owner = np.repeat(np.arange(K), counts)
    m = np.asarray(neighbor_normals, dtype=float).reshape(-1, 3)
    w = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0) if normalize \
        else (counts > 0).astype(float)
    active = counts > 0
    beta = np.full(K, float(beta_init))

    def seg(v):
        return np.bincount(owner, weights=v, minlength=K)

    def obj(nn, Xi, bb):
        r = 1.0 - np.einsum("ij,ij->i", m, nn[owner]) - Xi
        return 1.0 - np.einsum("ij,ij->i", nn, n0) + bb * w * seg(r * r)

    while np.any(active):
        D = 1.0 - np.einsum("ij,ij->i", m, n[owner])
        Xi = np.where(mu / beta[owner] > D * D, 0.0, D)
        b0, b1 = tangent_basis_batch(n)
        a0 = np.einsum("ij,ij->i", m, b0[owner])
        a1 = np.einsum("ij,ij->i", m, b1[owner])
        c = D - Xi
        s = 2.0 * beta * w
        A = np.empty((K, 2, 2))
        A[:, 0, 0] = 1.0 + s * seg(a0 * a0)
        A[:, 0, 1] = A[:, 1, 0] = s * seg(a0 * a1)
        A[:, 1, 1] = 1.0 + s * seg(a1 * a1)
        rhs = np.stack([np.einsum("ij,ij->i", b0, n0) + s * seg(a0 * c),
                        np.einsum("ij,ij->i", b1, n0) + s * seg(a1 * c)], axis=1)
        dphi = np.linalg.solve(A, rhs[..., None])[..., 0]
        dphi[~active] = 0.0
        g0 = obj(n, Xi, beta)
        new = n.copy()
        pending = active.copy()
        for _ in range(MAX_BACKTRACK):
            cand = n + b0 * dphi[:, :1] + b1 * dphi[:, 1:]
            cand /= np.linalg.norm(cand, axis=1, keepdims=True)
            ok = pending & (obj(cand, Xi, beta) <= g0)
            new[ok] = cand[ok]
            pending &= ~ok
            if not np.any(pending):
                break
            dphi *= 0.5
        moved = np.arctan2(np.linalg.norm(np.cross(n, new), axis=1),
                           np.einsum("ij,ij->i", n, new))
        n = new
        active &= moved >= min_update
        beta = np.where(active, beta * beta_scale, beta)
        active &= beta <= beta_max
    return n
