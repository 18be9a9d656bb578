import numpy as np
import pytest

from imarker import align, simulator as sim
from imarker.align import CalibrationError, DegenerateConfigurationError, Homography, Keypoint

from conftest import gray_frame

H_STAR = np.array([[1.2, 0.0, 10.0], [0.0, 0.9, -5.0], [0.0, 0.0, 1.0]])
H_PERSP = np.array([[1.1, 0.05, 12.0], [-0.04, 0.95, -7.0], [2e-4, -1e-4, 1.0]])


def _rel(a, b):
    a = np.asarray(a) / a[2, 2]
    b = np.asarray(b) / b[2, 2]
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- corners and descriptors

def test_constant_frame_has_no_corners():
    assert align.detect_corners(gray_frame(np.full((40, 40), 90))) == []


def test_square_corners():
    # a 12 px square: the 9-of-16 arc test on a radius-3 ring needs the
    # square to be wider than the ring for all four corners to fire
    a = np.zeros((40, 40), np.uint8)
    a[14:26, 14:26] = 255
    kps = align.detect_corners(gray_frame(a))
    assert len(kps) == 4
    truth = np.array([[14, 14], [25, 14], [14, 25], [25, 25]], float)
    for k in kps:
        assert np.min(np.hypot(*(truth - [k.x, k.y]).T)) <= 1.5


def test_descriptor_determinism_and_ties():
    rng = np.random.default_rng(0)
    f = gray_frame(rng.integers(0, 256, (64, 64)))
    kp = [Keypoint(32, 32, 1.0)]
    d1, _ = align.compute_descriptors(f, kp)
    d2, _ = align.compute_descriptors(f, kp)
    assert np.array_equal(d1, d2)
    flat, kept = align.compute_descriptors(gray_frame(np.full((64, 64), 50)), kp)
    assert kept == [0] and not flat.any()
    _, kept = align.compute_descriptors(f, [Keypoint(3, 3, 1.0)])
    assert kept == []


def test_matching_rules():
    rng = np.random.default_rng(1)
    d = rng.integers(0, 256, (30, 32), dtype=np.uint8)
    m = align.match_descriptors(d, d)
    assert [(i, j, dist) for i, j, dist in m] == [(i, i, 0) for i in range(30)]
    other = rng.integers(0, 256, (200, 32), dtype=np.uint8)
    spurious = align.match_descriptors(rng.integers(0, 256, (200, 32), dtype=np.uint8), other)
    assert len(spurious) < 0.05 * 200
    near = d[:1].copy()
    near[0, :8] ^= 0xFF  # 64 flipped bits
    assert len(align.match_descriptors(near, d[:1])) == 1
    near[0, 8] ^= 0x01
    assert align.match_descriptors(near, d[:1]) == []


# -- DLT and RANSAC

def test_dlt_identity_and_known():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    assert np.allclose(align.dlt_homography(sq, sq).m, np.eye(3), atol=1e-12)
    src = np.random.default_rng(2).uniform(0, 200, (12, 2))
    for h in (H_STAR, H_PERSP):
        got = align.dlt_homography(src, align.apply_homography(h, src))
        assert _rel(got.m, h) < 1e-9


def test_dlt_collinear_rejected():
    with pytest.raises(DegenerateConfigurationError):
        align.dlt_homography([[0, 0], [1, 1], [2, 2], [0, 5]], [[0, 0], [1, 0], [1, 1], [0, 1]])


def test_ransac_exact():
    src = np.random.default_rng(3).uniform(0, 640, (100, 2))
    h = align.estimate_homography_ransac(src, align.apply_homography(H_PERSP, src))
    assert h.inlier_count == 100
    assert _rel(h.m, H_PERSP) < 1e-6


def test_ransac_with_outliers():
    rng = np.random.default_rng(4)
    src = rng.uniform(0, 640, (100, 2))
    dst = align.apply_homography(H_PERSP, src)
    dst[60:] = rng.uniform(0, 640, (40, 2))
    h = align.estimate_homography_ransac(src, dst, iters=2000, inlier_tol=2.0, rng=4)
    assert h.inlier_count >= 58


def test_ransac_all_outliers():
    rng = np.random.default_rng(5)
    with pytest.raises(CalibrationError):
        align.estimate_homography_ransac(rng.uniform(0, 640, (50, 2)), rng.uniform(0, 640, (50, 2)))


def test_homography_io(tmp_path):
    h = Homography(H_PERSP, 42, 0.25)
    h.save(tmp_path / "h.txt")
    back = Homography.load(tmp_path / "h.txt")
    assert np.array_equal(back.m, h.m) and back.inlier_count == 42 and back.inlier_rms == 0.25


# -- warping

def test_warp_identity_and_round_trip():
    rng = np.random.default_rng(6)
    y, x = np.mgrid[0:80, 0:100]
    smooth = (128 + 60 * np.sin(x / 9.0) * np.cos(y / 7.0)).astype(np.uint8)
    f = gray_frame(smooth)
    assert align.warp_perspective(f, Homography.identity()) == f
    h = Homography([[1.02, 0.01, 1.5], [-0.01, 0.99, -1.0], [0, 0, 1]])
    back = align.warp_perspective(align.warp_perspective(f, h), h.inverse())
    inner = (slice(10, -10), slice(10, -10))
    assert np.abs(back.data[inner].astype(int) - smooth[inner]).max() <= 2
    noisy = gray_frame(rng.integers(0, 256, (20, 20)))
    out, valid = align.warp_perspective(noisy, Homography([[1, 0, 30], [0, 1, 0], [0, 0, 1]]),
                                        return_valid=True)
    assert not out.data.any() and not valid.any()


# -- calibration

def test_calibration_recovers_injected_homography():
    scene = sim.SimScene()
    c1, c2 = sim.calibration_pair(scene)
    h = align.calibrate_alignment(c1, c2)
    assert h.inlier_count >= 8
    assert _rel(h.m, scene.homography.m) < 1e-3


def test_calibration_constant_frames_fail():
    f = gray_frame(np.full((120, 160), 77))
    with pytest.raises(CalibrationError):
        align.calibrate_alignment(f, f)
