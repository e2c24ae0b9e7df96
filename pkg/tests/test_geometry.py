import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from pssba.geometry import (Pose, angle_between, exp_map, exp_map_batch, log_map,
                            matrix_to_quat, orthonormalize, perturb_normal, project_point,
                            quat_to_matrix, skew, skew_batch, stack_poses, tangent_basis,
                            tangent_basis_batch, unstack_poses)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
unit3 = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.array(v) / np.linalg.norm(v))


def random_pose(rng):
    return Pose(exp_map(rng.normal(size=3)), rng.normal(size=3) * 5)


def quat_rotate(axis_angle, v):
    """Independent oracle: rotate v by the unit quaternion q v q*."""
    th = np.linalg.norm(axis_angle)
    u = axis_angle / th
    w, xyz = np.cos(th / 2), np.sin(th / 2) * u
    t = 2 * np.cross(xyz, v)
    return v + w * t + np.cross(xyz, t)


def test_skew_examples():
    assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))
    np.testing.assert_array_equal(skew([1, 0, 0]) @ [0, 1, 0], [0, 0, 1])


@given(vec3, vec3)
def test_skew_is_cross_product_and_antisymmetric(a, b):
    S = skew(a)
    np.testing.assert_allclose(S, -S.T)
    np.testing.assert_allclose(S @ b, np.cross(a, b), atol=1e-12)


def test_skew_batch_matches_single():
    v = np.random.default_rng(0).normal(size=(7, 3))
    for S, x in zip(skew_batch(v), v):
        np.testing.assert_array_equal(S, skew(x))


def test_exp_map_zero_and_quarter_turn():
    np.testing.assert_array_equal(exp_map([0, 0, 0]), np.eye(3))
    v = np.array([np.pi / 2, 0, 0])
    np.testing.assert_allclose(exp_map(v) @ [0, 1, 0], [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(exp_map(v) @ [0, 1, 0], quat_rotate(v, np.array([0., 1, 0])),
                               atol=1e-15)


def test_exp_map_matches_quaternion_oracle_and_scipy():
    rng = np.random.default_rng(1)
    for _ in range(200):
        v = rng.normal(size=3)
        p = rng.normal(size=3)
        np.testing.assert_allclose(exp_map(v) @ p, quat_rotate(v, p), atol=1e-12)
        np.testing.assert_allclose(exp_map(v), Rotation.from_rotvec(v).as_matrix(), atol=1e-12)


def test_exp_map_matches_power_series():
    rng = np.random.default_rng(2)
    for _ in range(100):
        v = rng.normal(size=3)
        v *= rng.uniform(0, np.pi) / np.linalg.norm(v)
        series = np.eye(3)
        term = np.eye(3)
        # 30 terms: a 20-term series alone truncates at ~3e-10 when |v| = pi
        for k in range(1, 30):
            term = term @ skew(v) / k
            series = series + term
        np.testing.assert_allclose(exp_map(v), series, atol=1e-10)
        np.testing.assert_allclose(exp_map(v), expm(skew(v)), atol=1e-12)


def test_exp_map_inverse_pair():
    v = np.random.default_rng(3).normal(size=(1000, 3)) * 2
    err = max(np.abs(exp_map(x) @ exp_map(-x) - np.eye(3)).max() for x in v)
    assert err < 1e-9


@pytest.mark.parametrize("scale", [0.0, 1e-12, 1e-9, 5e-8, 1e-6])
def test_exp_map_small_angle_branch(scale):
    v = np.array([0.3, -0.5, 0.8]) * scale
    R = exp_map(v)
    np.testing.assert_allclose(R, expm(skew(v)), atol=1e-15)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)


@given(vec3)
def test_exp_map_is_rotation(v):
    R = exp_map(v)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) < 1e-9


def test_exp_map_batch_matches_single():
    v = np.random.default_rng(4).normal(size=(50, 3))
    v[0] = 0
    v[1] = 1e-10
    for R, x in zip(exp_map_batch(v), v):
        np.testing.assert_allclose(R, exp_map(x), atol=1e-14)


@given(vec3)
def test_log_inverts_exp(v):
    th = np.linalg.norm(v)
    if th > np.pi - 1e-6:
        v = v / th * (np.pi - 1e-3)
    np.testing.assert_allclose(log_map(exp_map(v)), v, atol=1e-9)


def test_log_map_near_pi():
    for axis in (np.array([1., 0, 0]), np.array([1., 2, -2]) / 3):
        for th in (np.pi, np.pi - 1e-7):
            w = log_map(exp_map(axis * th))
            assert abs(np.linalg.norm(w) - th) < 1e-6
            np.testing.assert_allclose(exp_map(w), exp_map(axis * th), atol=1e-9)


@given(vec3)
def test_quaternion_round_trip(v):
    R = exp_map(v)
    q = matrix_to_quat(R)
    assert abs(np.linalg.norm(q) - 1) < 1e-12 and q[3] >= 0
    np.testing.assert_allclose(quat_to_matrix(q), R, atol=1e-12)
    ref = Rotation.from_matrix(R).as_quat()
    np.testing.assert_allclose(np.abs(q @ ref), 1.0, atol=1e-12)


def test_orthonormalize_restores_rotation():
    R = exp_map([0.2, 0.1, -0.4]) + 1e-4
    Q = orthonormalize(R)
    np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(Q) > 0


def test_pose_validation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.eye(3), [np.nan, 0, 0])


def test_project_point_examples():
    np.testing.assert_array_equal(project_point(Pose(), [1, 2, 3]), [1, 2, 3])
    np.testing.assert_array_equal(project_point(Pose(np.eye(3), [1, 0, 0]), [0, 0, 0]), [1, 0, 0])


def test_pose_inverse_and_compose():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        p = rng.normal(size=3) * 10
        np.testing.assert_allclose(project_point(a.inverse(), project_point(a, p)), p, atol=1e-12)
        np.testing.assert_allclose(project_point(a.compose(b), p),
                                   project_point(a, project_point(b, p)), atol=1e-12)
        np.testing.assert_allclose(a.matrix() @ b.matrix(), a.compose(b).matrix(), atol=1e-12)


def test_stack_unstack_round_trip():
    rng = np.random.default_rng(6)
    poses = [random_pose(rng) for _ in range(4)]
    back = unstack_poses(*stack_poses(poses))
    for p, q in zip(poses, back):
        np.testing.assert_array_equal(p.R, q.R)
        np.testing.assert_array_equal(p.t, q.t)


@given(unit3)
def test_tangent_basis_right_handed(n):
    b0, b1 = tangent_basis(n)
    T = np.stack([b0, b1, n])
    np.testing.assert_allclose(T @ T.T, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(T) - 1) < 1e-9


@pytest.mark.parametrize("n", [(0, 0, 1), (0, 0, -1), (1e-9, 0, 1)])
def test_tangent_basis_fallback(n):
    n = np.asarray(n, dtype=float) / np.linalg.norm(n)
    b0, b1 = tangent_basis(n)
    T = np.stack([b0, b1, n])
    np.testing.assert_allclose(T @ T.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(T) - 1) < 1e-12


def test_tangent_basis_batch_matches_single():
    n = np.random.default_rng(7).normal(size=(30, 3))
    n[0] = (0, 0, 1)
    n[1] = (0, 0, -1)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    B0, B1 = tangent_basis_batch(n)
    for k in range(len(n)):
        b0, b1 = tangent_basis(n[k])
        np.testing.assert_allclose(B0[k], b0, atol=1e-14)
        np.testing.assert_allclose(B1[k], b1, atol=1e-14)


def test_perturb_normal_examples():
    n = np.array([0.6, 0.0, 0.8])
    np.testing.assert_array_equal(perturb_normal(n, (0, 0)), n)
    with pytest.raises(ValueError):
        perturb_normal([1.0, 1.0, 0.0], (0, 0))


@given(unit3, st.floats(-0.07, 0.07), st.floats(-0.07, 0.07))
def test_perturb_normal_is_unit(n, a, b):
    assert abs(np.linalg.norm(perturb_normal(n, (a, b))) - 1) < 1e-12


def test_perturb_normal_first_order_angle():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        d = rng.normal(size=2)
        d *= 1e-3 / np.linalg.norm(d)
        ang = angle_between(n, perturb_normal(n, d))
        assert abs(ang - 1e-3) / 1e-3 < 1e-3


@settings(max_examples=50)
@given(vec3, vec3)
def test_angle_between_matches_arccos(a, b):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    c = a @ b / np.linalg.norm(a) / np.linalg.norm(b)
    assert abs(angle_between(a, b) - np.arccos(np.clip(c, -1, 1))) < 1e-6
