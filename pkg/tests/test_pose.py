import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imarker import pose as P
from imarker import simulator as sim
from imarker.align import DegenerateConfigurationError, dlt_homography
from imarker.marker import MarkerDetection
from imarker.pose import CameraIntrinsics, MarkerGeometry, Pose6DoF

K = CameraIntrinsics(800.0, 800.0, 512.0, 384.0)
KD = CameraIntrinsics(800.0, 790.0, 510.0, 380.0, -0.1, 0.02, 0.001, -0.0005, 0.0)
G = MarkerGeometry(0.07)


def _pose(angle_deg=0.0, axis=(0, 1, 0), t=(0.0, 0.0, 0.5)):
    r = P.axis_angle_to_matrix(np.array(axis, float) * math.radians(angle_deg))
    return Pose6DoF.from_matrix(r, t)


def _corners(k, pose):
    return k.project(pose.transform(G.object_points))


# -- camera model

def test_undistort_pinhole():
    px = np.array([[600.0, 100.0], [512.0, 384.0]])
    assert np.allclose(P.undistort(px, K), [[88 / 800, -284 / 800], [0, 0]])


def test_distort_undistort_round_trip():
    k = CameraIntrinsics(800, 800, 512, 384, k1=-0.1)
    xy = np.random.default_rng(0).uniform(-0.5, 0.5, (200, 2))
    back = P.undistort(k.to_pixels(k.distort(xy)), k)
    assert np.abs(back - xy).max() < 1e-8


def test_intrinsics_io(tmp_path):
    KD.save(tmp_path / "k.txt")
    assert CameraIntrinsics.load(tmp_path / "k.txt") == KD
    with pytest.raises(ValueError):
        CameraIntrinsics.parse("1 2 3")


# -- rotations and errors

@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1))
def test_quaternion_round_trip(q):
    r = P.quat_to_matrix(q)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.allclose(P.quat_to_matrix(P.matrix_to_quat(r)), r, atol=1e-12)


def test_pose_error_examples():
    a = _pose()
    assert P.pose_error(a, a) == (0.0, 0.0)
    b = Pose6DoF(a.rotation, a.translation + [0.003, 0.004, 0])
    assert P.pose_error(a, b)[0] == pytest.approx(0.005, abs=1e-15)
    c = _pose(10.0, axis=(0.3, -0.5, 0.8) / np.linalg.norm([0.3, -0.5, 0.8]))
    assert P.pose_error(a, c)[1] == pytest.approx(10.0, abs=1e-9)


# -- homography decomposition

def test_frontal_candidate_exact():
    truth = _pose()
    H = dlt_homography(G.object_points[:, :2], _corners(K, truth))
    errs = [P.pose_error(c, truth) for c in P.pose_from_homography(K, H)]
    t_err, r_err = min(errs)
    assert t_err < 1e-6 and math.radians(r_err) < 1e-5


def test_rotated_45_candidate():
    truth = _pose(45.0)
    H = dlt_homography(G.object_points[:, :2], _corners(K, truth))
    angles = [2 * math.degrees(math.acos(min(1.0, abs(c.rotation[0])))) for c in P.pose_from_homography(K, H)]
    assert min(abs(a - 45.0) for a in angles) < 0.01


def test_mirrored_homography_rejected():
    truth = _pose()
    H = dlt_homography(G.object_points[:, :2], _corners(K, truth)).m
    mirror = H @ np.diag([-1.0, 1.0, 1.0])
    with pytest.raises(DegenerateConfigurationError):
        P.pose_from_homography(K, mirror)


# -- refinement

@pytest.mark.parametrize("k", [K, KD])
def test_jacobian_matches_central_differences(k):
    pose = _pose(30.0, axis=(0.2, 0.9, 0.1) / np.linalg.norm([0.2, 0.9, 0.1]), t=(0.03, -0.02, 0.6))
    obs = _corners(k, pose) + 0.7
    jac = P.reprojection_jacobian(k, G, pose)
    eps = 1e-6
    num = np.empty_like(jac)
    for i in range(6):
        d = np.zeros(6)
        d[i] = eps
        plus = P.reprojection_residuals(k, G, obs, P.apply_update(pose, d))
        minus = P.reprojection_residuals(k, G, obs, P.apply_update(pose, -d))
        num[:, i] = (plus - minus) / (2 * eps)
    rel = np.abs(jac - num) / np.maximum(np.abs(num), 1.0)
    assert rel.max() < 1e-5


def test_refine_at_truth_is_stationary():
    truth = _pose(20.0)
    got = P.refine_pose(K, G, _corners(K, truth), truth)
    assert np.abs(got.translation - truth.translation).max() < 1e-10
    assert P.pose_error(got, truth)[1] < 1e-8


def test_refine_recovers_from_perturbation():
    truth = _pose(35.0, t=(0.02, 0.01, 0.5))
    start = Pose6DoF.from_matrix(P.axis_angle_to_matrix([0, 0, math.radians(5)]) @ truth.matrix,
                                 truth.translation + [0.02, 0, 0])
    fit = P.refine_pose(KD, G, _corners(KD, truth), start, return_info=True)
    t_err, r_err = P.pose_error(fit.pose, truth)
    assert fit.converged and t_err < 1e-6 and math.radians(r_err) < 1e-5
    assert all(b <= a for a, b in zip(fit.costs, fit.costs[1:]))


# -- end to end

def test_estimate_pose_from_render():
    scene = sim.SimScene(noise=sim.NoiseModel(gaussian_sigma=0.0))
    from imarker.pipelines import detect_range

    dets = detect_range(sim.simulate_uv(scene), intrinsics=scene.intrinsics, geometry=scene.geometry)
    assert [d.id for d in dets] == [scene.marker_id]
    assert P.pose_error(dets[0].pose, scene.marker_pose)[0] < 1e-3


def test_estimate_pose_at_75_degrees():
    truth = _pose(75.0)
    est = P.estimate_pose(K, G, _corners(K, truth))
    assert P.pose_error(est, truth)[0] < 1e-6


@pytest.mark.parametrize("k", range(4))
def test_corner_order_absorbed_by_rotation(k):
    truth = _pose(25.0, t=(0.01, 0.0, 0.5))
    c = _corners(K, truth)
    det = MarkerDetection(3, np.roll(c, -k, axis=0), rotation=90 * k)
    est = P.estimate_pose(K, G, det)
    ref = P.estimate_pose(K, G, c)
    assert np.allclose(est.translation, ref.translation, atol=1e-12)
    assert P.pose_error(est, ref)[1] < 1e-6
