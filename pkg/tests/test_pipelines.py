from dataclasses import replace

import numpy as np
import pytest

from imarker import imgcore, pipelines as pl, simulator as sim
from imarker.align import Homography
from imarker.imgcore import ColorRangeHSV, Frame, FrameFormat, GrayRange
from imarker.marker import recognize, render_marker, default_dictionary
from imarker.pipelines import PipelineParams, PolarizerState, StageTrace, SyncedPair
from imarker.pose import pose_error

QUIET = sim.NoiseModel()
NOISY = sim.NoiseModel(gaussian_sigma=3.0)


def _ts(stamps):
    return [Frame(np.zeros((2, 2), np.uint8), timestamp=int(t)) for t in stamps]


def _scene(**kw):
    return sim.SimScene(**{"noise": QUIET, **kw})


# -- polarizer signal

def test_polarizer_examples():
    assert pl.polarizer_signal(1) is PolarizerState.ON
    assert pl.polarizer_signal(4) is PolarizerState.OFF
    assert all(pl.polarizer_signal(2 * n - 1) is PolarizerState.ON for n in range(1, 101))
    with pytest.raises(ValueError):
        pl.polarizer_signal(0)


# -- frame pairing

def _optimal_pairs(t1, t2, tol):
    """Exhaustive search over one-to-one pairings within ``tol``: most pairs,
    then least total skew."""
    cands = [[j for j in range(len(t2)) if abs(t2[j] - t1[i]) <= tol] for i in range(len(t1))]
    best = (0, 0.0, ())

    def walk(i, used, chosen, skew):
        nonlocal best
        if i == len(t1):
            key = (len(chosen), -skew)
            if key > (best[0], -best[1]):
                best = (len(chosen), skew, tuple(chosen))
            return
        if len(chosen) + (len(t1) - i) < best[0]:
            return
        for j in cands[i]:
            if j not in used:
                walk(i + 1, used | {j}, chosen + [(i, j)], skew + abs(t2[j] - t1[i]))
        walk(i + 1, used, chosen, skew)

    walk(0, frozenset(), [], 0.0)
    return best[2]


def test_pair_identical_streams():
    t = np.arange(20) * 33_333
    pairs, dropped = pl.pair_frames(_ts(t), _ts(t), 1000)
    assert len(pairs) == 20 and dropped == 0 and all(p.skew == 0 for p in pairs)


def test_pair_tolerance_boundary():
    t = np.arange(20) * 33_333
    tol = 1000
    pairs, dropped = pl.pair_frames(_ts(t), _ts(t + tol + 1), tol)
    assert pairs == [] and dropped == 40
    pairs, _ = pl.pair_frames(_ts(t), _ts(t + tol), tol)
    assert len(pairs) == 20


@pytest.mark.parametrize("seed", range(8))
def test_pair_matches_exhaustive_optimum(seed):
    rng = np.random.default_rng(seed)
    tol, period = 4000, 33_333
    base = np.arange(20) * period
    t1 = base + rng.integers(-tol // 2, tol // 2 + 1, 20)
    t2 = base + rng.integers(-tol // 2, tol // 2 + 1, 20)
    keep = np.sort(rng.choice(20, size=17, replace=False))
    t2 = t2[keep]
    pairs, dropped = pl.pair_frames(_ts(t1), _ts(t2), tol)
    got = tuple((p.index, int(np.flatnonzero(t2 == p.f2.timestamp)[0])) for p in pairs)
    assert got == _optimal_pairs(list(t1), list(t2), tol)
    assert dropped == len(t1) + len(t2) - 2 * len(pairs)


# -- params

def test_params_validation():
    with pytest.raises(ValueError):
        PipelineParams(theta=300)
    with pytest.raises(ValueError):
        PipelineParams(erode_radius=0)
    with pytest.raises(ValueError):
        PipelineParams(blur_sigma=0)


# -- dual

def test_dual_recovers_marker_and_corners():
    scene = _scene()
    f1, f2, _ = sim.simulate_dual(scene)
    trace = StageTrace()
    dets = pl.detect_dual(SyncedPair(f1, f2), scene.homography, trace=trace,
                          intrinsics=scene.intrinsics, geometry=scene.geometry)
    assert [d.id for d in dets] == [scene.marker_id]
    assert np.hypot(*(dets[0].ordered_corners - scene.projected_corners()).T).max() <= 1.5
    t_err, r_err = pose_error(dets[0].pose, scene.marker_pose)
    assert t_err < 1e-3 and r_err < 0.1
    assert trace.names == ["grayscale", "align", "subtract", "threshold", "erode", "blur", "binarize",
                           "recognize"]


def test_dual_identical_frames_empty():
    f1, _, _ = sim.simulate_dual(_scene())
    assert pl.detect_dual(SyncedPair(f1, f1), Homography.identity()) == []
    with pytest.raises(ValueError):
        pl.detect_dual(SyncedPair(f1, f1), None)


def test_dual_without_marker_empty():
    scene = _scene(marker_id=None, noise=NOISY)
    f1, f2, _ = sim.simulate_dual(scene)
    assert pl.detect_dual(SyncedPair(f1, f2), scene.homography) == []


def test_dual_at_75_degrees():
    scene = _scene(noise=NOISY, geometry=sim.MarkerGeometry(0.10)).with_pose(75.0, 0.30)
    c = scene.projected_corners()
    side = np.hypot(*(c - np.roll(c, 1, axis=0)).T).min()
    assert side >= 60
    f1, f2, _ = sim.simulate_dual(scene)
    assert [d.id for d in pl.detect_dual(SyncedPair(f1, f2), scene.homography)] == [scene.marker_id]


# -- temporal

def test_temporal_detects_after_first_frame():
    scene = _scene(noise=NOISY)
    seq = sim.simulate_temporal(scene, 10)
    out = list(pl.detect_temporal((f, tr) for f, _, tr in seq))
    assert [i for i, _ in out] == list(range(2, 11))
    hits = sum(any(d.id == scene.marker_id for d in dets) for _, dets in out)
    assert hits >= 8


def test_temporal_transitions_skipped():
    scene = _scene(noise=NOISY)
    seq = sim.simulate_temporal(scene, 12, transitions=(3, 6, 9))
    out = dict(pl.detect_temporal((f, tr) for f, _, tr in seq))
    assert sorted(out) == [2, 4, 5, 7, 8, 10, 11, 12]
    # frame 4 is compared with frame 2, not with the skipped frame 3
    det = pl.TemporalDetector()
    det.process(seq[1][0])
    assert det.process(seq[2][0], transition=True) is None
    assert det.prev == seq[1][0]


def test_temporal_stuck_polarizer():
    f = sim.render(_scene(noise=NOISY), sim.ChannelState.PASS)
    out = list(pl.detect_temporal([f] * 6))
    assert len(out) == 5 and all(dets == [] for _, dets in out)


def test_temporal_without_marker():
    seq = sim.simulate_temporal(_scene(marker_id=None, noise=NOISY), 6)
    assert all(dets == [] for _, dets in pl.detect_temporal(f for f, _, _ in seq))


def test_temporal_trace_order():
    scene = _scene()
    det = pl.TemporalDetector()
    det.process(sim.render(scene, sim.ChannelState.PASS))
    trace = StageTrace()
    det.process(sim.render(scene, sim.ChannelState.BLOCK), trace=trace)
    assert trace.names == ["grayscale", "subtract", "threshold", "erode", "blur", "binarize", "recognize"]


# -- color mask

def test_mask_detects_camouflaged_marker():
    scene = _scene(noise=NOISY)
    trace = StageTrace()
    dets = pl.detect_mask(sim.simulate_camouflage(scene), trace=trace)
    assert [d.id for d in dets] == [scene.marker_id]
    assert trace.names == ["hsv", "color_mask", "erode", "blur", "binarize", "recognize"]


def test_mask_control_and_off_range():
    scene = _scene(noise=NOISY)
    assert pl.detect_mask(sim.simulate_camouflage(scene, blocked=False)) == []
    red = replace(scene, background=sim.Background(color_hsv=(0.0, 0.7, 0.6)))
    f = sim.simulate_camouflage(red)
    assert not imgcore.mask_color(f, PipelineParams().color_range).data.min() == 0
    assert pl.detect_mask(f) == []


def test_mask_wrapped_hue_equivalent():
    scene = _scene(noise=NOISY, background=sim.Background(color_hsv=(10.0, 0.7, 0.6)))
    f = sim.simulate_camouflage(scene)
    wrapped = PipelineParams(color_range=ColorRangeHSV(340.0, 40.0, 0.3, 1.0, 0.49, 1.0))
    plain = PipelineParams(color_range=ColorRangeHSV(0.0, 40.0, 0.3, 1.0, 0.49, 1.0))
    a, b = pl.detect_mask(f, wrapped), pl.detect_mask(f, plain)
    assert [d.id for d in a] == [d.id for d in b] == [scene.marker_id]
    assert np.array_equal(a[0].corners, b[0].corners)


# -- gray range

def test_range_detects_uv_marker():
    scene = _scene(noise=NOISY)
    trace = StageTrace()
    dets = pl.detect_range(sim.simulate_uv(scene), trace=trace)
    assert [d.id for d in dets] == [scene.marker_id]
    assert trace.names == ["gray_check", "range_mask", "erode", "blur", "binarize", "recognize"]


def test_range_black_frame_and_dim_scene():
    assert pl.detect_range(Frame(np.zeros((120, 160), np.uint8))) == []
    dim = _scene(noise=NOISY, illumination=0.2)
    assert pl.detect_range(sim.simulate_uv(dim)) == []


def test_range_on_binary_render_equals_direct_recognition():
    d = default_dictionary()
    render = render_marker(d, 19, bright_ink=True)
    gray = Frame(render.data, FrameFormat.GRAY8)
    params = PipelineParams(gray_range=GrayRange(128, 255), erode_iters=0, refine=False)
    via = pl.detect_range(gray, params)
    direct = recognize(imgcore.threshold(imgcore.gaussian_blur(render, 1.0), 128), d)
    assert [x.id for x in via] == [x.id for x in direct] == [19]
    assert np.array_equal(via[0].corners, direct[0].corners)


def test_range_mask_is_rasterized_pattern():
    scene = _scene()
    mask = imgcore.mask_gray(sim.simulate_uv(scene), PipelineParams().gray_range).data == 255
    truth = sim.ground_truth_ink_mask(scene)
    assert np.count_nonzero(mask != truth) <= 0.002 * truth.sum()


def test_stage_trace_rejects_unknown_stage():
    t = StageTrace()
    with pytest.raises(ValueError):
        with t.step("x", "nope"):
            pass
    t.record("a", "processing", 2.0)
    assert t.stage_ms()["processing"] == 2.0 and set(t.stage_ms()) == set(pl.STAGES)


def test_dual_symmetric_under_camera_swap():
    scene = _scene(noise=NOISY)
    f1, f2, _ = sim.simulate_dual(scene)
    h = scene.homography
    a = pl.detect_dual(SyncedPair(f1, f2), h)
    b = pl.detect_dual(SyncedPair(f2, f1), h.inverse())
    assert [d.id for d in a] == [d.id for d in b] == [scene.marker_id]
    # b lives on camera 2's grid; bring its corners back to camera 1
    back = h.apply(b[0].ordered_corners)
    assert np.hypot(*(back - a[0].ordered_corners).T).max() <= 1.0


@pytest.mark.parametrize("angle", [0.0, 40.0, 70.0])
def test_detections_stay_inside_frame(angle):
    scene = replace(sim.SimScene(noise=NOISY), marker_pose=sim.pose_at(angle, 0.4, offset=(0.2, 0.1)))
    w, h = scene.image_size
    from imarker.bench import detect_in_scene

    for pipeline in pl.PIPELINES:
        for d in detect_in_scene(pipeline, scene):
            c = d.corners
            assert (c[:, 0] >= 0).all() and (c[:, 0] <= w - 1).all()
            assert (c[:, 1] >= 0).all() and (c[:, 1] <= h - 1).all()
