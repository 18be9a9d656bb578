import hashlib
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from imarker import marker, simulator as sim
from imarker.imgcore import Frame, FrameFormat
from imarker.simulator import ChannelState, SceneError


def _digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_pass_render_decodes_directly():
    scene = sim.SimScene()
    f = sim.render(scene, ChannelState.PASS)
    binary = Frame(np.where(f.data >= 128, 255, 0).astype(np.uint8), FrameFormat.BIN1)
    assert [d.id for d in marker.recognize(binary, scene.codebook)] == [scene.marker_id]


def test_block_render_matches_background_when_reflectances_agree():
    albedo = 0.3
    scene = sim.SimScene(
        channel=sim.ChannelModel(csr_reflectance_block=albedo * (1 - 0.02)),
        background=sim.Background(albedo=albedo),
        noise=sim.NoiseModel(gaussian_sigma=3.0),
    )
    f = sim.render(scene, ChannelState.BLOCK).data.astype(float)
    ink = sim.ground_truth_ink_mask(scene)
    assert abs(f[ink].mean() - f[~ink].mean()) < 1.0


def test_same_seed_same_frames():
    scene = sim.SimScene(noise=sim.NoiseModel(gaussian_sigma=3.0, salt_pepper_fraction=0.01), seed=5)
    assert sim.render(scene, ChannelState.PASS) == sim.render(scene, ChannelState.PASS)
    assert sim.render(scene, ChannelState.PASS) != sim.render(replace(scene, seed=6), ChannelState.PASS)
    assert sim.render(scene, ChannelState.PASS, stream=1) != sim.render(scene, ChannelState.PASS, stream=2)


def test_projected_corners_order():
    c = sim.SimScene().projected_corners()
    assert c[0, 0] < c[1, 0] and c[0, 1] < c[3, 1]  # TL left of TR, above BL


def test_scene_validation():
    with pytest.raises(SceneError):
        sim.SimScene(illumination=3.0)
    with pytest.raises(SceneError):
        sim.ChannelModel(csr_reflectance_pass=0.1, csr_reflectance_block=0.2)
    with pytest.raises(SceneError):
        sim.NoiseModel(salt_pepper_fraction=0.5)
    with pytest.raises(SceneError):
        sim.pose_at(10, 0.5, axis="w")


def test_temporal_sequence_states():
    scene = sim.SimScene(image_size=(64, 48), marker_id=None)
    seq = sim.simulate_temporal(scene, 6, transitions=(4,))
    assert [flag for _, _, flag in seq] == [False, False, False, True, False, False]
    assert [f.timestamp for f, _, _ in seq] == [k * 33_333 for k in range(6)]
    with pytest.raises(SceneError):
        sim.simulate_temporal(scene, 1)


# -- scene files

def test_example_scene_parses():
    spec = sim.load_scene(sim.example_scene_path())
    assert spec.mode == "dual" and spec.frames == 6 and spec.scene.marker_id == 7


@pytest.mark.parametrize("text,needle", [
    ("bogus_key = 3", "bogus_key"),
    ("distance = far", "distance"),
    ("seed = 1\nseed = 2", "seed"),
    ("just words", "line 1"),
    ("marker_id = 99", "marker_id"),
    ("mode = video", "mode"),
    ("offset = 1 2 3", "offset"),
])
def test_scene_errors_name_the_problem(text, needle):
    with pytest.raises(SceneError, match=needle):
        sim.parse_scene(text)


def test_scene_overrides():
    spec = sim.parse_scene("seed = 1\nmode = uv", overrides={"seed": 9})
    assert spec.scene.seed == 9 and spec.mode == "uv"
    with pytest.raises(SceneError, match="nope"):
        sim.parse_scene("", overrides={"nope": 1})


@pytest.mark.parametrize("mode,files", [
    ("dual", ["cam1/000001.pgm", "cam2/000002.pgm", "timestamps.csv", "calibration/cam1.pgm"]),
    ("temporal", ["seq/000003.pgm", "polarizer.csv"]),
    ("camouflage", ["frames/000001.ppm"]),
    ("uv", ["frames/000002.pgm"]),
])
def test_write_dataset_layout(tmp_path, mode, files):
    spec = sim.parse_scene(f"mode = {mode}\nframes = 3\nwidth = 160\nheight = 120\n"
                           "intrinsics = 300 300 79.5 59.5\n"
                           "gaussian_sigma = 2")
    root = sim.write_dataset(spec, tmp_path / mode)
    for name in files + ["ground_truth.csv", "intrinsics.txt"]:
        assert (root / name).is_file(), name
    gt = sim.read_ground_truth(root / "ground_truth.csv")
    assert sorted(gt) == [1, 2, 3]
    assert np.allclose(gt[1].translation, spec.scene.marker_pose.translation)


def test_dataset_determinism(tmp_path):
    spec = sim.parse_scene("mode = temporal\nframes = 4\nwidth = 200\nheight = 150\ngaussian_sigma = 3\n"
                           "intrinsics = 300 300 99.5 74.5\n"
                           "salt_pepper_fraction = 0.01\nseed = 12")
    a = sim.write_dataset(spec, tmp_path / "a")
    b = sim.write_dataset(spec, tmp_path / "b")
    assert _digest(a) == _digest(b)
