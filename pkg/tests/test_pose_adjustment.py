import numpy as np
import pytest

from pssba.geometry import Pose, exp_map, stack_poses
from pssba.pose_adjustment import (POINT2PLANE, POLYNOMIAL, SolverConfig, evaluate_batch,
                                   evaluate_point2plane, evaluate_residual, solve_poses,
                                   update_norms)
from pssba.surface_fitting import (FactorSet, KernelSet, TangentFrame, basis_of_normal,
                                   build_factors, from_tangent, surface_value)

N_FRAMES = 4


class Problem:
    """Kernels owned by the gauge frame with neighbours from every frame, all points lying
    exactly on each kernel's quadratic when the frames sit at ``truth``."""

    def __init__(self, seed=0, K=80, m=10, kernel_frames=(0,)):
        rng = np.random.default_rng(seed)
        self.truth = [Pose()] + [Pose(exp_map(rng.normal(0, 0.2, 3)), rng.normal(0, 2.0, 3))
                                 for _ in range(N_FRAMES - 1)]
        world, frame, pidx, origin, M, alpha, nb, off = [], [], [], [], [], [], [], [0]
        for k in range(K):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            f = TangentFrame(basis_of_normal(n), rng.uniform(-10, 10, 3))
            a = rng.normal(0, 0.15, 5)
            pidx.append(len(world))
            world.append(f.origin)
            frame.append(kernel_frames[k % len(kernel_frames)])
            x, y = rng.uniform(-1.5, 1.5, (2, m))
            pts = from_tangent(f, np.column_stack([x, y, surface_value(a, x, y)]))
            nb.extend(range(len(world), len(world) + m))
            world.extend(pts)
            frame.extend(np.arange(m) % N_FRAMES)
            off.append(off[-1] + m)
            origin.append(f.origin)
            M.append(f.M)
            alpha.append(a)
        self.frame = np.array(frame)
        world = np.array(world)
        Rs, ts = stack_poses(self.truth)
        self.sensor = np.einsum("nji,nj->ni", Rs[self.frame], world - ts[self.frame])
        pidx = np.array(pidx)
        self.kernels = KernelSet(pidx, self.frame[pidx], np.array(origin), np.array(M),
                                 np.array(alpha), np.array(off), np.array(nb), np.zeros(K),
                                 np.ones(K, bool), 1.5)
        self.factors = build_factors(self.kernels, self.frame)

    def solve(self, poses, mode=POLYNOMIAL, **cfg):
        return solve_poses(self.factors, self.kernels, self.sensor, poses, SolverConfig(**cfg),
                           mode)


def max_error(poses, truth):
    return max(np.linalg.norm(p.t - q.t) for p, q in zip(poses, truth))


def shifted(poses, frame, dt=(0, 0, 0), dtheta=(0, 0, 0)):
    out = [p.copy() for p in poses]
    out[frame] = Pose(exp_map(dtheta) @ out[frame].R, out[frame].t + np.asarray(dt, float))
    return out


def test_residual_zero_on_surface():
    P = Problem()
    sigma, *_ = evaluate_batch(P.factors, P.kernels, P.sensor, *stack_poses(P.truth))
    assert np.abs(sigma).max() < 1e-12


def test_plane_kernel_residual_examples():
    M = basis_of_normal([0.0, 0.0, 1.0])
    origin = np.array([1.0, 2.0, 3.0])
    kernels = KernelSet(np.array([0]), np.array([0]), origin[None], M[None], np.zeros((1, 5)),
                        np.array([0, 1]), np.array([1]), np.zeros(1), np.ones(1, bool), 1.0)
    factors = FactorSet(np.array([0]), np.array([1]), np.array([0]), np.array([1]))
    poses = [Pose(), Pose()]
    for z in (0.0, 0.02, 0.1):
        sensor = np.array([origin, origin + [0.3, -0.2, z]])
        poly = evaluate_residual(factors, 0, poses, kernels, sensor)
        p2p = evaluate_point2plane(factors, 0, poses, kernels, sensor)
        assert abs(poly.sigma + z) < 1e-15
        assert abs(p2p.sigma - z) < 1e-15
        # gauge frame 0 carries the kernel: its blocks are zeroed
        assert not poly.J_ti.any() and not poly.J_thetai.any()
        np.testing.assert_allclose(poly.J_tj, -p2p.J_tj, atol=1e-15)
    kernels.valid[0] = False
    with pytest.raises(ValueError):
        evaluate_residual(factors, 0, poses, kernels, sensor)


@pytest.mark.parametrize("mode", [POLYNOMIAL, POINT2PLANE])
def test_jacobians_match_finite_differences(mode):
    P = Problem(seed=1, K=30, kernel_frames=(0, 1, 2, 3))
    rng = np.random.default_rng(2)
    poses = [Pose(exp_map(rng.normal(0, 0.05, 3)) @ p.R, p.t + rng.normal(0, 0.1, 3))
             for p in P.truth]
    Rs, ts = stack_poses(poses)
    _, J_ti, J_thi, J_tj, J_thj = evaluate_batch(P.factors, P.kernels, P.sensor, Rs, ts, mode)
    h = 1e-6

    def sig(Rs_, ts_):
        return evaluate_batch(P.factors, P.kernels, P.sensor, Rs_, ts_, mode, jacobians=False)[0]

    for which, Jt, Jth in (("i", J_ti, J_thi), ("j", J_tj, J_thj)):
        fr = P.factors.frame_i if which == "i" else P.factors.frame_j
        other = P.factors.frame_j if which == "i" else P.factors.frame_i
        sel = fr != other         # same-frame factors mix both blocks
        for d in range(3):
            e = np.zeros(3)
            e[d] = h
            num_t = np.zeros(len(P.factors))
            num_th = np.zeros(len(P.factors))
            for f in range(N_FRAMES):
                rows = sel & (fr == f)
                tp, tm = ts.copy(), ts.copy()
                tp[f] += e
                tm[f] -= e
                num_t[rows] = ((sig(Rs, tp) - sig(Rs, tm)) / (2 * h))[rows]
                Rp, Rm = Rs.copy(), Rs.copy()
                Rp[f] = exp_map(e) @ Rs[f]
                Rm[f] = exp_map(-e) @ Rs[f]
                num_th[rows] = ((sig(Rp, ts) - sig(Rm, ts)) / (2 * h))[rows]
            for ana, num in ((Jt[sel, d], num_t[sel]), (Jth[sel, d], num_th[sel])):
                err = np.abs(ana - num)
                assert np.all((err < 1e-5 * np.maximum(np.abs(num), 1e-3)) | (err < 1e-9))


def test_solver_fixed_point():
    P = Problem()
    st = P.solve(P.truth)
    assert np.abs(st.update_norms).max() < 1e-8
    assert st.residual_rms < 1e-12


def test_solver_recovers_single_frame_translation():
    P = Problem()
    st = P.solve(shifted(P.truth, 2, dt=(0.05, 0, 0)))
    assert max_error(st.poses, P.truth) < 1e-3


def test_solver_recovers_all_frames():
    P = Problem(seed=3)
    rng = np.random.default_rng(4)
    start = P.truth[:1] + [Pose(exp_map(rng.normal(0, 0.01, 3)) @ p.R, p.t + rng.normal(0, 0.05, 3))
                           for p in P.truth[1:]]
    st = P.solve(start)
    assert max_error(st.poses, P.truth) < 1e-6
    assert st.poses[0].R is not start[0].R
    np.testing.assert_array_equal(st.poses[0].R, start[0].R)
    np.testing.assert_array_equal(st.poses[0].t, start[0].t)


@pytest.mark.parametrize("mode", [POLYNOMIAL, POINT2PLANE])
def test_cost_non_increasing(mode):
    P = Problem(seed=5)
    st = P.solve(shifted(P.truth, 1, dt=(0.1, -0.05, 0.02), dtheta=(0.01, 0, -0.02)), mode)
    assert np.all(np.diff(st.cost_history) <= 0)
    assert st.residual_rms <= st.initial_rms


def test_quadratic_convergence_signature():
    P = Problem(seed=6)
    start = shifted(P.truth, 3, dt=(0.006, -0.005, 0.004))
    e0 = max_error(start, P.truth)
    st = P.solve(start, max_iters=1)
    assert max_error(st.poses, P.truth) < 0.1 * e0


def test_gauge_invariance():
    P = Problem(seed=7)
    start = shifted(P.truth, 1, dt=(0.04, 0.0, -0.03), dtheta=(0.0, 0.01, 0.0))
    base = P.solve(start).poses
    G = Pose(exp_map([0.3, -1.2, 0.5]), [4.0, -2.0, 7.0])
    moved = Problem(seed=7)
    moved.kernels.origin = P.kernels.origin @ G.R.T + G.t
    moved.kernels.M = P.kernels.M @ G.R.T
    out = moved.solve([G.compose(p) for p in start]).poses
    for a, b in zip(base, out):
        ga = G.compose(a)
        np.testing.assert_allclose(ga.t, b.t, atol=1e-6)
        np.testing.assert_allclose(ga.R, b.R, atol=1e-6)


def test_unconstrained_frames():
    P = Problem()
    keep = P.factors.frame_j == 0
    only_gauge = FactorSet(*(a[keep] for a in (P.factors.kernel, P.factors.point,
                                               P.factors.frame_i, P.factors.frame_j)))
    with pytest.raises(ValueError):
        solve_poses(only_gauge, P.kernels, P.sensor, P.truth)
    keep = P.factors.frame_j != 3
    partial = FactorSet(*(a[keep] for a in (P.factors.kernel, P.factors.point,
                                            P.factors.frame_i, P.factors.frame_j)))
    st = solve_poses(partial, P.kernels, P.sensor, shifted(P.truth, 3, dt=(0.1, 0, 0)))
    assert st.frozen == [3]


def test_huber_downweights_outliers():
    P = Problem(seed=8)
    bad = P.sensor.copy()
    rows = P.factors.point[P.factors.frame_j == 1][:5]
    bad[rows] += 0.5
    start = shifted(P.truth, 1, dt=(0.03, 0, 0))
    plain = solve_poses(P.factors, P.kernels, bad, start, SolverConfig(max_iters=30))
    robust = solve_poses(P.factors, P.kernels, bad, start, SolverConfig(max_iters=30, huber=0.01))
    assert max_error(robust.poses, P.truth) < max_error(plain.poses, P.truth)


def test_update_norms():
    a = [Pose(), Pose()]
    b = [Pose(), Pose(exp_map([0, 0, 0.1]), [0.3, 0.4, 0])]
    np.testing.assert_allclose(update_norms(a, b), [[0, 0], [0.5, 0.1]], atol=1e-15)
