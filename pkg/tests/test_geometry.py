import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsedepth.errors import DegenerateConfigurationError, DegenerateMotionError, PointAtInfinityError
from sparsedepth.geometry import (
    TriangulationStatus,
    backproject_pixel,
    cross_matrix,
    jacobi_eigh,
    linear_triangulate,
    project,
    projection_matrix,
    triangulate_depth_map,
    triangulate_inverse_depth_map,
    triangulate_point,
    triangulation_matrix,
    rotation_angle_error,
    translation_angle_error,
)
from sparsedepth.losses import abs_inv
from sparsedepth.scene import CameraIntrinsics, DataConfig, PoseSE3, corrupt_flow, make_pair, rotation_xyz

K100 = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)


def random_rig(rng):
    K1 = CameraIntrinsics(rng.uniform(50, 150), rng.uniform(50, 150), 32.0, 24.0, 64, 48)
    K2 = CameraIntrinsics(rng.uniform(50, 150), rng.uniform(50, 150), 30.0, 25.0, 64, 48)
    R = rotation_xyz(*rng.uniform(-0.3, 0.3, size=3))
    t = rng.normal(size=3)
    return K1, K2, PoseSE3(R, t / np.linalg.norm(t))


# -- projection --------------------------------------------------------------


def test_project_examples():
    P = projection_matrix(np.eye(3))
    uv, lam = project(P, [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(uv, [0.0, 0.0])
    assert lam == 1.0
    P = projection_matrix(np.diag([100.0, 100.0, 1.0]))
    uv, _ = project(P, [1.0, 0.0, 2.0])
    np.testing.assert_allclose(uv, [50.0, 0.0], atol=0)


def test_project_at_infinity():
    with pytest.raises(PointAtInfinityError):
        project(projection_matrix(np.eye(3)), [1.0, 2.0, 0.0])


def test_project_backproject_round_trip():
    rng = np.random.default_rng(0)
    P = projection_matrix(K100)
    for _ in range(100):
        M = np.append(rng.uniform(-2, 2, size=2), rng.uniform(0.5, 5))
        uv, _ = project(P, M)
        np.testing.assert_allclose(backproject_pixel(K100, uv, M[2]), M, atol=1e-12)


def test_projection_matrix_rank():
    K1, K2, pose = random_rig(np.random.default_rng(1))
    assert np.linalg.matrix_rank(projection_matrix(K2, pose)) == 3


# -- cross matrix ------------------------------------------------------------


def test_cross_matrix_examples():
    assert not cross_matrix([0.0, 0.0, 0.0]).any()
    np.testing.assert_array_equal(cross_matrix([1.0, 0.0, 0.0]), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])


def test_cross_matrix_matches_cross_product():
    rng = np.random.default_rng(2)
    for _ in range(100):
        u, v = rng.normal(size=3), rng.normal(size=3)
        C = cross_matrix(u)
        np.testing.assert_allclose(C @ v, np.cross(u, v), atol=1e-14)
        np.testing.assert_array_equal(C, -C.T)


# -- triangulation system ----------------------------------------------------


def test_triangulation_matrix_annihilates_true_point():
    rng = np.random.default_rng(3)
    K1, K2, pose = random_rig(rng)
    P1, P2 = projection_matrix(K1), projection_matrix(K2, pose)
    M = np.array([0.3, -0.2, 4.0, 1.0])
    m1 = np.append(project(P1, M)[0], 1.0)
    m2 = np.append(project(P2, M)[0], 1.0)
    A = triangulation_matrix(P1, P2, m1, m2)
    assert A.shape == (6, 4)
    assert np.linalg.norm(A @ M) < 1e-10
    assert np.linalg.matrix_rank(A[:3]) == 2 and np.linalg.matrix_rank(A[3:]) == 2
    A2 = triangulation_matrix(P1, P2, 3.5 * m1, m2)
    np.testing.assert_allclose(A2[:3], 3.5 * A[:3], rtol=1e-15)
    np.testing.assert_array_equal(A2[3:], A[3:])


def test_linear_triangulate_worked_example():
    P1 = projection_matrix(K100)
    P2 = projection_matrix(K100, PoseSE3(np.eye(3), [-1.0, 0.0, 0.0]))
    M = triangulate_point(P1, P2, [50.0, 50.0], [0.0, 50.0])
    np.testing.assert_allclose(M, [0.0, 0.0, 2.0], atol=1e-12)


def test_linear_triangulate_thousand_points():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        K1, K2, pose = random_rig(rng)
        P1, P2 = projection_matrix(K1), projection_matrix(K2, pose)
        M = np.append(rng.uniform(-1.5, 1.5, size=2), rng.uniform(1.0, 8.0))
        m1, m2 = project(P1, M)[0], project(P2, M)[0]
        est = triangulate_point(P1, P2, m1, m2)
        worst = max(worst, float(np.linalg.norm(est - M)))
        # reprojection error in both views
        assert np.linalg.norm(project(P1, est)[0] - m1) < 1e-8
        assert np.linalg.norm(project(P2, est)[0] - m2) < 1e-8
    assert worst < 1e-8


def test_identical_cameras_are_degenerate():
    P = projection_matrix(K100)
    with pytest.raises(DegenerateConfigurationError):
        triangulate_point(P, P, [10.0, 20.0], [10.0, 20.0])


def test_point_at_infinity_raises():
    P1 = projection_matrix(K100)
    P2 = projection_matrix(K100, PoseSE3(np.eye(3), [-1.0, 0.0, 0.0]))
    with pytest.raises(PointAtInfinityError):
        triangulate_point(P1, P2, [20.0, 30.0], [20.0, 30.0])
    M = linear_triangulate(triangulation_matrix(P1, P2, np.array([20.0, 30.0, 1]), np.array([20.0, 30.0, 1])), homogeneous=True)
    assert abs(np.linalg.norm(M) - 1) < 1e-12 and abs(M[3]) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(
    st.integers(0, 10**6),
    st.floats(0.01, 100.0),
    st.floats(0.01, 100.0),
    st.lists(st.floats(0.1, 10.0), min_size=6, max_size=6),
)
def test_triangulation_is_scale_invariant(seed, c1, c2, rows):
    # rescaling m1, m2 or rows of A reweights the least-squares problem, so
    # the minimiser is invariant only for consistent (noiseless) systems
    rng = np.random.default_rng(seed)
    K1, K2, pose = random_rig(rng)
    P1, P2 = projection_matrix(K1), projection_matrix(K2, pose)
    M = np.append(rng.uniform(-1, 1, size=2), rng.uniform(1.0, 6.0))
    m1 = np.append(project(P1, M)[0], 1.0)
    m2 = np.append(project(P2, M)[0], 1.0)
    A = triangulation_matrix(P1, P2, m1, m2)
    ref = linear_triangulate(A, homogeneous=True)
    a = linear_triangulate(triangulation_matrix(P1, P2, c1 * m1, c2 * m2), homogeneous=True)
    b = linear_triangulate(np.asarray(rows)[:, None] * A, homogeneous=True)
    assert min(np.linalg.norm(a - ref), np.linalg.norm(a + ref)) < 1e-8
    assert min(np.linalg.norm(b - ref), np.linalg.norm(b + ref)) < 1e-8


def test_jacobi_matches_reference_eigensolver():
    rng = np.random.default_rng(5)
    S = rng.normal(size=(200, 4, 4))
    S = S @ np.swapaxes(S, 1, 2)
    w, V = jacobi_eigh(S)
    w_ref = np.linalg.eigvalsh(S)
    np.testing.assert_allclose(w, w_ref, rtol=1e-10, atol=1e-12)
    resid = np.linalg.norm(S @ V[..., :, :1] - w[..., None, :1] * V[..., :, :1], axis=(1, 2))
    assert np.max(resid / np.linalg.norm(S, axis=(1, 2))) < 1e-10
    np.testing.assert_allclose(np.swapaxes(V, 1, 2) @ V, np.broadcast_to(np.eye(4), V.shape), atol=1e-12)


# -- dense maps --------------------------------------------------------------


@pytest.mark.parametrize("index", range(5))
def test_dense_triangulation_on_exact_flow(index):
    p = make_pair(21, index, DataConfig(max_rotation_deg=10.0))
    depth, status = triangulate_depth_map(p.flow12, p.intrinsics1, p.intrinsics2, p.pose)
    ok = status == TriangulationStatus.OK
    assert ok.mean() > 0.99
    assert abs_inv(p.depth1, np.where(ok, depth, 1.0), ok) < 1e-8
    inv, _ = triangulate_inverse_depth_map(p.flow12, p.intrinsics1, p.intrinsics2, p.pose)
    assert np.max(np.abs(inv[ok] - 1.0 / p.depth1[ok])) < 1e-8


def test_zero_flow_has_no_valid_depth():
    K = CameraIntrinsics.nominal(32, 16)
    depth, status = triangulate_depth_map(np.zeros((16, 32, 2)), K, K, PoseSE3(np.eye(3), [0.6, 0.0, 0.8]))
    assert np.all(status != TriangulationStatus.OK)
    assert np.all(np.isnan(depth))
    assert set(np.unique(status)) <= {TriangulationStatus.AT_INFINITY, TriangulationStatus.DEGENERATE}


def test_triangulation_errors_stay_on_corrupted_pixels():
    p = make_pair(22, 0, DataConfig(width=32, height=16))
    noisy, mag = corrupt_flow(p.flow12, 0, 0.0, 0.1, 5.0)
    clean, st_clean = triangulate_depth_map(p.flow12, p.intrinsics1, p.intrinsics2, p.pose)
    dirty, st_dirty = triangulate_depth_map(noisy, p.intrinsics1, p.intrinsics2, p.pose)
    keep = (mag == 0) & (st_clean == TriangulationStatus.OK)
    assert np.array_equal(st_clean[keep], st_dirty[keep])
    assert abs(abs_inv(p.depth1, clean, keep) - abs_inv(p.depth1, dirty, keep)) < 1e-8
    np.testing.assert_array_equal(clean[keep], dirty[keep])
    assert np.any(np.abs(np.nan_to_num(dirty[mag > 0]) - clean[mag > 0]) > 1e-6)


def test_single_pixel_locality():
    p = make_pair(22, 1, DataConfig(width=32, height=16))
    f = p.flow12.copy()
    f[7, 9] += [3.0, -2.0]
    a, _ = triangulate_depth_map(p.flow12, p.intrinsics1, p.intrinsics2, p.pose)
    b, _ = triangulate_depth_map(f, p.intrinsics1, p.intrinsics2, p.pose)
    changed = ~((a == b) | (np.isnan(a) & np.isnan(b)))
    assert changed.sum() == 1 and changed[7, 9]


def test_behind_camera_flagged():
    K = CameraIntrinsics.nominal(32, 16)
    pose = PoseSE3(np.eye(3), [1.0, 0.0, 0.0])
    # flow pointing the wrong way triangulates behind the cameras
    flow = np.zeros((16, 32, 2))
    flow[..., 0] = -3.0
    _, status = triangulate_depth_map(flow, K, K, pose)
    assert np.all(status == TriangulationStatus.BEHIND_CAMERA)


# -- pose errors ---------------------------------------------------------------


def test_pose_error_examples():
    R = rotation_xyz(0.1, -0.2, 0.3)
    assert rotation_angle_error(R, R) == pytest.approx(0.0, abs=1e-6)
    assert rotation_angle_error(rotation_xyz(0, 0, math.pi / 2), np.eye(3)) == pytest.approx(90.0, abs=1e-12)
    assert translation_angle_error([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0, abs=1e-12)
    assert translation_angle_error([1, 1, 0], [2, 2, 0]) == pytest.approx(0.0, abs=1e-12)


def test_zero_translation_rejected():
    with pytest.raises(DegenerateMotionError):
        translation_angle_error([0, 0, 0], [1, 0, 0])
