import math

import numpy as np
import pytest

from imarker import bench, simulator as sim
from imarker.bench import StageTiming, SweepResult
from imarker.pipelines import STAGES


def test_max_distance_from_rates():
    assert bench.max_distance_from_rates({0.5: 1.0, 1.0: 0.95, 1.5: 0.9, 2.0: 1.0}) == 1.0
    assert bench.max_distance_from_rates({0.5: 0.5}) == 0.0
    assert bench.max_distance_from_rates({}) == 0.0


def test_spearman():
    assert bench.spearman([0, 1, 2, 3], [1, 2, 5, 9]) == pytest.approx(1.0)
    assert bench.spearman([0, 1, 2, 3], [9, 5, 2, 1]) == pytest.approx(-1.0)


def test_range_csv_round_trip(tmp_path):
    runs = [("mask", 0.07, [SweepResult(0.0, 1.0, rates={0.5: 1.0, 1.0: 1.0, 1.25: 0.4}),
                            SweepResult(75.0, 0.5, rates={0.5: 1.0, 0.75: 0.1})]),
            ("range", 0.06, [SweepResult(0.0, 0.0, rates={0.5: 0.2})])]
    bench.write_range_csv(tmp_path / "r.csv", runs)
    back = bench.read_range_csv(tmp_path / "r.csv")
    assert sorted(back) == [("mask", 0.07), ("range", 0.06)]
    assert [(r.angle, r.max_distance) for r in back[("mask", 0.07)]] == [(0.0, 1.0), (75.0, 0.5)]
    assert back[("mask", 0.07)][0].rates == {0.5: 1.0, 1.0: 1.0, 1.25: 0.4}


def test_pose_csv_round_trip(tmp_path):
    rows = [(0.0, 0, 0.001, 0.1), (0.0, 1, math.nan, math.nan), (15.0, 0, 0.003, 0.2)]
    bench.write_pose_csv(tmp_path / "p.csv", [("dual", rows)])
    back = bench.read_pose_csv(tmp_path / "p.csv")
    assert [(r.angle, r.pose_mean_error) for r in back["dual"]] == [(0.0, 0.001), (15.0, 0.003)]


def test_timing_csv_round_trip(tmp_path):
    t = StageTiming("range", 1.0, 0.5, 2.0, 3.0, 1.5, frames=40)
    bench.write_timing_csv(tmp_path / "t.csv", [t])
    (back,) = bench.read_timing_csv(tmp_path / "t.csv")
    assert back.as_dict() == t.as_dict() and back.sum == pytest.approx(8.0)


def test_sweep_is_deterministic_and_monotone():
    kw = dict(angles=(0.0, 60.0), distances=(0.5, 0.75, 1.0, 1.5, 2.0, 3.0), pipeline="range", trials=3)
    a = bench.sweep_detection_range(**kw)
    b = bench.sweep_detection_range(**kw)
    assert [(r.angle, r.max_distance, r.rates) for r in a] == [(r.angle, r.max_distance, r.rates) for r in b]
    assert a[0].max_distance >= a[1].max_distance > 0
    with pytest.raises(ValueError):
        bench.sweep_detection_range(distances=(1.0, 0.5))


def test_noise_free_pose_sweep_under_2mm():
    tmpl = bench.sweep_scene(noise=sim.NoiseModel())
    res, rows = bench.sweep_pose_error(pipeline="range", scene_template=tmpl, trials=1)
    assert len(res) == 6 and len(rows) == 6
    assert all(r.pose_mean_error < 2e-3 for r in res)


def test_profile_schema(tmp_path):
    scene = sim.SimScene(image_size=(320, 240), intrinsics=sim.CameraIntrinsics(750, 750, 159.5, 119.5),
                         noise=sim.NoiseModel(gaussian_sigma=2.0))
    ds = bench.make_profile_datasets(tmp_path, n_frames=3, warmup=1, scene=scene, pipelines=("range", "temporal"))
    for p, root in ds.items():
        t = bench.profile(p, root, n_frames=3, warmup=1)
        assert t.frames == 3 and set(t.as_dict()) == set(STAGES)
        assert all(v >= 0 for v in t.as_dict().values()) and t.recognition > 0
    with pytest.raises(ValueError):
        bench.profile("range", ds["range"], n_frames=50, warmup=0)


def test_compare_report(tmp_path):
    bench.write_range_csv(tmp_path / "r.csv", [
        ("mask", 0.07, [SweepResult(0.0, rates={1.0: 1.0, 1.25: 0.0}), SweepResult(30.0, rates={1.0: 0.0})]),
        ("temporal", 0.07, [SweepResult(0.0, rates={1.0: 1.0, 1.25: 0.0}), SweepResult(30.0, rates={1.0: 0.0})]),
    ])
    bench.write_pose_csv(tmp_path / "p.csv", [("mask", [(a, 0, 0.001 * (1 + a / 15), 0.0)
                                                        for a in bench.DEFAULT_ANGLES])])
    bench.write_clutter_csv(tmp_path / "c.csv", {"dual": 1.0, "mask": 0.0}, 10)
    bench.write_timing_csv(tmp_path / "t.csv", [StageTiming("range", 1, 0, 1, 1, 1)])
    report = bench.compare_pipelines(tmp_path / "r.csv", tmp_path / "p.csv", tmp_path / "c.csv", tmp_path / "t.csv")
    again = bench.compare_pipelines(tmp_path / "r.csv", tmp_path / "p.csv", tmp_path / "c.csv", tmp_path / "t.csv")
    assert report == again
    assert "Largest gap 0.0%" in report and "PASS" in report
    assert "Spearman rank correlation, mask: 1.000" in report
    assert "| dual | 100% |" in report and "| range |" in report


def test_static_dynamic_gap():
    ranges = {("mask", 0.07): [SweepResult(0.0, 2.0)], ("temporal", 0.07): [SweepResult(0.0, 1.8)]}
    ((angle, s, d, gap),) = bench.static_dynamic_gaps(ranges)
    assert (angle, s, d) == (0.0, 2.0, 1.8) and gap == pytest.approx(0.1)
