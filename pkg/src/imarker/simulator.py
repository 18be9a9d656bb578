"""Synthetic scenes standing in for polarization-revealed markers.

The marker "ink" occupies the dark cells of the printed layout (border ring
and 0-bits). Its reflectance depends on the polarization channel: bright in
the passing channel, dim in the blocking one. Everything else (background and
the transparent marker substrate) looks the same in both channels apart from
a small polarized leak.

Rendering ray-casts every pixel onto the marker plane with 16 samples per
pixel (a 4x4 rotated grid) over the marker's bounding box, so the rasterized corners agree with the
ground-truth projection to well below a pixel.
"""

from __future__ import annotations

import colorsys
import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .align import Homography
from .imgcore import Frame, FrameFormat, read_frame, write_frame
from .marker import Dictionary, default_dictionary
from .pose import (CameraIntrinsics, MarkerGeometry, Pose6DoF, axis_angle_to_matrix,
                   undistort)

SUPERSAMPLE = 4


class ChannelState(str, Enum):
    PASS = "PASS"
    BLOCK = "BLOCK"
    MIXED = "MIXED"  # liquid-crystal relaxation: undefined polarization


class SceneError(ValueError):
    """Invalid scene description."""


@dataclass(frozen=True)
class ChannelModel:
    csr_reflectance_pass: float = 0.85
    csr_reflectance_block: float = 0.08
    background_polarization_leak: float = 0.02
    uv_background: float = 0.10

    def __post_init__(self):
        for name in ("csr_reflectance_pass", "csr_reflectance_block",
                     "background_polarization_leak", "uv_background"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SceneError(f"{name} must lie in [0, 1]")
        if not self.csr_reflectance_pass > self.csr_reflectance_block:
            raise SceneError("passing reflectance must exceed blocking reflectance")


@dataclass(frozen=True)
class NoiseModel:
    gaussian_sigma: float = 0.0
    salt_pepper_fraction: float = 0.0
    misalignment: float = 0.0  # px, residual inter-camera warp

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.misalignment < 0:
            raise SceneError("noise parameters must be nonnegative")
        if not 0.0 <= self.salt_pepper_fraction <= 0.02:
            raise SceneError("salt_pepper_fraction must lie in [0, 0.02]")


@dataclass(frozen=True)
class Background:
    kind: str = "uniform"  # uniform | checkerboard | clutter | image
    albedo: float = 0.30
    albedo2: float = 0.55
    color_hsv: tuple[float, float, float] = (120.0, 0.70, 0.60)
    square_px: float = 32.0
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "checkerboard", "clutter", "image"):
            raise SceneError(f"unknown background kind {self.kind!r}")
        if self.kind == "image" and not self.path:
            raise SceneError("image background needs a path")


DEFAULT_INTRINSICS = CameraIntrinsics(750.0, 750.0, 511.5, 383.5)
DEFAULT_DUAL_HOMOGRAPHY = np.array([
    [1.004, 0.006, 9.5],
    [-0.005, 0.998, -6.25],
    [2.0e-6, -1.5e-6, 1.0],
])


@dataclass(frozen=True)
class SimScene:
    marker_id: int | None = 7
    marker_pose: Pose6DoF = field(default_factory=lambda: Pose6DoF([1, 0, 0, 0], [0, 0, 0.5]))
    geometry: MarkerGeometry = field(default_factory=lambda: MarkerGeometry(0.07))
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    image_size: tuple[int, int] = (1024, 768)
    background: Background = field(default_factory=Background)
    channel: ChannelModel = field(default_factory=ChannelModel)
    noise: NoiseModel = field(default_factory=NoiseModel)
    illumination: float = 1.0
    seed: int = 0
    swap_polarity: bool = False
    camouflage_hue_offset: float = 3.0
    dual_homography: tuple = tuple(map(tuple, DEFAULT_DUAL_HOMOGRAPHY))
    dictionary: Dictionary | None = None

    def __post_init__(self):
        if not 0.2 <= self.illumination <= 2.0:
            raise SceneError("illumination gain must lie in [0.2, 2.0]")
        if self.marker_pose.translation[2] <= 0:
            raise SceneError("marker must be in front of the camera (tz > 0)")
        w, h = self.image_size
        if w < 8 or h < 8:
            raise SceneError("image too small")

    @property
    def codebook(self) -> Dictionary:
        return self.dictionary if self.dictionary is not None else default_dictionary()

    @property
    def homography(self) -> Homography:
        return Homography(np.array(self.dual_homography))

    def projected_corners(self) -> np.ndarray:
        """Ground-truth image corners (TL, TR, BR, BL of the marker)."""
        pts = self.marker_pose.transform(self.geometry.object_points)
        return self.intrinsics.project(pts)

    def with_pose(self, angle_deg: float, distance: float, axis: str = "y") -> "SimScene":
        return replace(self, marker_pose=pose_at(angle_deg, distance, axis))


def pose_at(angle_deg: float, distance: float, axis: str = "y", offset=(0.0, 0.0)) -> Pose6DoF:
    """Marker facing the camera, rotated ``angle_deg`` about its own ``axis``."""
    axes = {"x": [1.0, 0, 0], "y": [0, 1.0, 0], "z": [0, 0, 1.0]}
    if axis not in axes:
        raise SceneError(f"axis must be x, y or z, got {axis!r}")
    vec = axes[axis]
    r = axis_angle_to_matrix(np.array(vec) * math.radians(angle_deg))
    return Pose6DoF.from_matrix(r, [offset[0], offset[1], distance])


# ----------------------------------------------------------------- raster

def _pixel_rays(K: CameraIntrinsics, px: np.ndarray) -> np.ndarray:
    if K.has_distortion:
        xy = undistort(px, K)
    else:
        xy = np.stack([(px[:, 0] - K.cx) / K.fx, (px[:, 1] - K.cy) / K.fy], axis=1)
    return np.concatenate([xy, np.ones((len(xy), 1))], axis=1)


def _marker_uv(scene: SimScene, px: np.ndarray):
    """Marker-plane coordinates (meters) of the rays through pixel positions."""
    rays = _pixel_rays(scene.intrinsics, px)
    r = scene.marker_pose.matrix
    t = scene.marker_pose.translation
    n = r[:, 2]
    den = rays @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (n @ t) / den
    hit = (s > 0) & np.isfinite(s)
    p = rays * np.where(hit, s, 0.0)[:, None]
    local = (p - t) @ r
    return local[:, 0], local[:, 1], hit


def _rook_offsets(ss: int):
    """ss*ss sub-pixel offsets on a rotated grid: every sample has its own
    x and y offset, so straight edges are resolved to 1/ss^2 px."""
    i, j = np.meshgrid(np.arange(ss), np.arange(ss), indexing="ij")
    ox = (i * ss + j + 0.5) / (ss * ss) - 0.5
    oy = (j * ss + i + 0.5) / (ss * ss) - 0.5
    return ox.ravel(), oy.ravel()


def coverage(scene: SimScene, cam_map: np.ndarray | None = None, ss: int = SUPERSAMPLE):
    """Per-pixel fractions (ink, marker) over the marker's bounding box.

    ``cam_map`` is an optional 3x3 matrix taking this camera's pixels into
    the reference camera's pixels (used for the second dual-vision camera).
    Returns (ink, marker, (x0, y0)) where the arrays cover the box at (x0, y0).
    """
    w, h = scene.image_size
    if scene.marker_id is None:
        return None
    corners = scene.projected_corners()
    if cam_map is not None:
        corners = Homography(np.linalg.inv(cam_map)).apply(corners)
    x0 = int(max(0, math.floor(corners[:, 0].min()) - 2))
    y0 = int(max(0, math.floor(corners[:, 1].min()) - 2))
    x1 = int(min(w, math.ceil(corners[:, 0].max()) + 3))
    y1 = int(min(h, math.ceil(corners[:, 1].max()) + 3))
    if x1 <= x0 or y1 <= y0:
        raise SceneError("marker projects fully outside the frame")
    bw, bh = x1 - x0, y1 - y0
    ox, oy = _rook_offsets(ss)
    xx, yy = np.meshgrid(np.arange(x0, x1, dtype=np.float64), np.arange(y0, y1, dtype=np.float64))
    px = np.stack([(xx[..., None] + ox).ravel(), (yy[..., None] + oy).ravel()], axis=1)
    if cam_map is not None:
        px = Homography(cam_map).apply(px)
    u, v, hit = _marker_uv(scene, px)
    side = scene.geometry.side_length
    n = scene.codebook.grid_n + 2
    inside = hit & (np.abs(u) < side / 2) & (np.abs(v) < side / 2)
    col = np.clip(np.floor((u + side / 2) / side * n).astype(int), 0, n - 1)
    row = np.clip(np.floor((v + side / 2) / side * n).astype(int), 0, n - 1)
    bits = scene.codebook.marker_bits(scene.marker_id)
    ink = inside & (bits[row, col] == 0)
    shape = (bh, bw, ss * ss)
    ink_f = ink.reshape(shape).mean(axis=2)
    mk_f = inside.reshape(shape).mean(axis=2)
    return ink_f, mk_f, (x0, y0)


def _background_values(bg: Background, xs: np.ndarray, ys: np.ndarray, rgb: bool) -> np.ndarray:
    shape = xs.shape
    if bg.kind == "uniform":
        if rgb:
            return np.broadcast_to(np.array(_hsv_rgb(*bg.color_hsv)), shape + (3,)).astype(np.float64)
        return np.full(shape, bg.albedo)
    if bg.kind == "checkerboard":
        parity = (np.floor(xs / bg.square_px) + np.floor(ys / bg.square_px)) % 2 == 1
        if rgb:
            c1 = np.array(_hsv_rgb(*bg.color_hsv))
            c2 = np.array(_hsv_rgb(bg.color_hsv[0], bg.color_hsv[1], bg.color_hsv[2] * 0.6))
            return np.where(parity[..., None], c2, c1)
        return np.where(parity, bg.albedo2, bg.albedo)
    if bg.kind == "clutter":
        return _clutter(bg, xs, ys, rgb)
    img = read_frame(bg.path)
    data = img.data.astype(np.float64) / 255.0
    if rgb and data.ndim == 2:
        data = np.repeat(data[..., None], 3, axis=2)
    if not rgb and data.ndim == 3:
        data = data @ np.array([0.299, 0.587, 0.114])
    hh, ww = data.shape[:2]
    xi = np.clip(np.rint(xs * (ww / max(1, xs.max() + 1))), 0, ww - 1).astype(int)
    yi = np.clip(np.rint(ys * (hh / max(1, ys.max() + 1))), 0, hh - 1).astype(int)
    return data[yi, xi]


def _clutter(bg: Background, xs, ys, rgb):
    """Two overlaid random block grids of different pitch; analytic in (x, y)."""
    rng = np.random.default_rng(bg.seed)
    p1, p2 = bg.square_px, bg.square_px * 1.618
    t1 = rng.random((512, 512))
    t2 = rng.random((512, 512))
    i1 = (np.floor(xs / p1).astype(int) % 512, np.floor(ys / p1).astype(int) % 512)
    i2 = (np.floor((xs + 7.3) / p2).astype(int) % 512, np.floor((ys + 3.1) / p2).astype(int) % 512)
    a = 0.5 * (t1[i1[1], i1[0]] + t2[i2[1], i2[0]])
    if not rgb:
        return 0.1 + 0.8 * a
    hue = (a * 997.0) % 360.0
    sat = 0.3 + 0.6 * t1[i2[1], i2[0]]
    val = 0.25 + 0.7 * t2[i1[1], i1[0]]
    return _hsv_rgb_array(hue, sat, val)


def _box_axis(c, pitch, off):
    """Cell indices and overlap lengths of the unit interval around ``c``.

    The interval spans at most two cells because every pitch exceeds 1 px.
    """
    lo = c - 0.5 + off
    i0 = np.floor(lo / pitch)
    edge = (i0 + 1) * pitch
    w0 = np.minimum(edge - lo, 1.0)
    return i0.astype(np.int64), w0, 1.0 - w0


def _box_grid(xs, ys, pitch, ox, oy, table):
    """Exact pixel-area average of a piecewise-constant grid texture."""
    ix, wx0, wx1 = _box_axis(xs, pitch, ox)
    iy, wy0, wy1 = _box_axis(ys, pitch, oy)
    out = np.zeros(xs.shape)
    for dy, wy in ((0, wy0), (1, wy1)):
        for dx, wx in ((0, wx0), (1, wx1)):
            out += wx * wy * table(ix + dx, iy + dy)
    return out


def _background_gray_exact(bg: Background, xs, ys) -> np.ndarray:
    if bg.kind == "checkerboard":
        lo, hi = bg.albedo, bg.albedo2
        return _box_grid(xs, ys, bg.square_px, 0.0, 0.0,
                         lambda i, j: np.where((i + j) % 2 == 1, hi, lo))
    rng = np.random.default_rng(bg.seed)
    p1, p2 = bg.square_px, bg.square_px * 1.618
    t1 = rng.random((512, 512))
    t2 = rng.random((512, 512))
    a = _box_grid(xs, ys, p1, 0.0, 0.0, lambda i, j: t1[j % 512, i % 512])
    a = a + _box_grid(xs, ys, p2, 7.3, 3.1, lambda i, j: t2[j % 512, i % 512])
    return 0.1 + 0.4 * a


def _hsv_rgb(h, s, v):
    return colorsys.hsv_to_rgb((h % 360.0) / 360.0, s, v)


def _hsv_rgb_array(h, s, v):
    h = (np.asarray(h) % 360.0) / 60.0
    c = v * s
    x = c * (1 - np.abs(h % 2 - 1))
    m = v - c
    z = np.zeros_like(h)
    sector = np.floor(h).astype(int) % 6
    r = np.choose(sector, [c, x, z, z, x, c])
    g = np.choose(sector, [x, c, c, x, z, z])
    b = np.choose(sector, [z, z, x, c, c, x])
    return np.stack([r + m, g + m, b + m], axis=-1)


def _background_image(scene: SimScene, rgb: bool, cam_map=None) -> np.ndarray:
    w, h = scene.image_size
    bg = scene.background
    if bg.kind == "uniform":
        return _background_values(bg, np.zeros((h, w)), np.zeros((h, w)), rgb).copy()
    if not rgb and bg.kind in ("checkerboard", "clutter"):
        xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        if cam_map is not None:
            pts = Homography(cam_map).apply(np.stack([xx.ravel(), yy.ravel()], axis=1))
            xx, yy = pts[:, 0].reshape(h, w), pts[:, 1].reshape(h, w)
        return _background_gray_exact(bg, xx, yy)
    ss = 2
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    gx = (np.arange(w)[:, None] + offs[None, :]).ravel()
    gy = (np.arange(h)[:, None] + offs[None, :]).ravel()
    xx, yy = np.meshgrid(gx, gy)
    if cam_map is not None:
        pts = Homography(cam_map).apply(np.stack([xx.ravel(), yy.ravel()], axis=1))
        xx, yy = pts[:, 0].reshape(xx.shape), pts[:, 1].reshape(yy.shape)
    vals = _background_values(bg, xx, yy, rgb)
    if rgb:
        return vals.reshape(h, ss, w, ss, 3).mean(axis=(1, 3))
    return vals.reshape(h, ss, w, ss).mean(axis=(1, 3))


def _finish(img: np.ndarray, scene: SimScene, rng: np.random.Generator) -> np.ndarray:
    out = img * 255.0
    sigma = scene.noise.gaussian_sigma
    if sigma > 0:
        out = out + rng.normal(0.0, sigma, size=out.shape)
    out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    frac = scene.noise.salt_pepper_fraction
    if frac > 0:
        flip = rng.random(out.shape[:2]) < frac
        salt = rng.random(out.shape[:2]) < 0.5
        out[flip & salt] = 255
        out[flip & ~salt] = 0
    return out


def _ink_reflectance(scene: SimScene, state: ChannelState) -> float:
    ch = scene.channel
    if state is ChannelState.PASS:
        return ch.csr_reflectance_pass
    if state is ChannelState.BLOCK:
        return ch.csr_reflectance_block
    return 0.5 * (ch.csr_reflectance_pass + ch.csr_reflectance_block)


def _rng(scene: SimScene, stream: int) -> np.random.Generator:
    return np.random.default_rng([scene.seed, stream])


def render(scene: SimScene, channel_state: ChannelState | str, *, camera: int = 1,
           stream: int = 0, cam_map=None) -> Frame:
    """Grayscale view of the scene through one polarization channel.

    ``camera=2`` renders the second dual-vision camera, whose pixels relate to
    camera 1 through the scene's inter-camera homography. ``stream`` selects
    an independent noise draw for the same scene seed.
    """
    state = ChannelState(channel_state)
    if camera == 2 and cam_map is None:
        cam_map = scene.homography.m.copy()
        mis = scene.noise.misalignment
        if mis > 0:
            shift = _rng(scene, 10_000 + stream).uniform(-mis, mis, size=2)
            cam_map = np.array([[1, 0, shift[0]], [0, 1, shift[1]], [0, 0, 1.0]]) @ cam_map
    bg = _background_image(scene, False, cam_map)
    if state is ChannelState.BLOCK:
        bg = bg * (1.0 - scene.channel.background_polarization_leak)
    elif state is ChannelState.MIXED:
        bg = bg * (1.0 - 0.5 * scene.channel.background_polarization_leak)
    img = bg
    cov = coverage(scene, cam_map)
    if cov is not None:
        ink, _, (x0, y0) = cov
        bh, bw = ink.shape
        box = img[y0:y0 + bh, x0:x0 + bw]
        img[y0:y0 + bh, x0:x0 + bw] = box * (1.0 - ink) + ink * _ink_reflectance(scene, state)
    img = img * scene.illumination
    return Frame(_finish(img, scene, _rng(scene, stream)), FrameFormat.GRAY8)


def ground_truth_ink_mask(scene: SimScene, cam_map=None) -> np.ndarray:
    """Boolean mask of pixels more than half covered by marker ink."""
    w, h = scene.image_size
    out = np.zeros((h, w), dtype=bool)
    cov = coverage(scene, cam_map)
    if cov is not None:
        ink, _, (x0, y0) = cov
        bh, bw = ink.shape
        out[y0:y0 + bh, x0:x0 + bw] = ink >= 0.5
    return out


# ------------------------------------------------------------------ modes

def simulate_dual(scene: SimScene, stream: int = 0):
    """(f1, f2, ground-truth pose): camera 1 passes, camera 2 blocks the ink."""
    f1 = render(scene, ChannelState.PASS, camera=1, stream=2 * stream)
    f2 = render(scene, ChannelState.BLOCK, camera=2, stream=2 * stream + 1)
    return f1, f2, scene.marker_pose


def calibration_pair(scene: SimScene, square_px: float = 9.0) -> tuple[Frame, Frame]:
    """Feature-rich calibration views for estimating the inter-camera homography."""
    calib = replace(scene, marker_id=None,
                    background=Background(kind="clutter", square_px=square_px, seed=scene.seed + 101),
                    noise=replace(scene.noise, salt_pepper_fraction=0.0, misalignment=0.0))
    f1 = render(calib, ChannelState.PASS, camera=1, stream=900)
    f2 = render(calib, ChannelState.PASS, camera=2, stream=901)
    return f1, f2


def polarizer_state(scene: SimScene, t: int) -> ChannelState:
    """Channel seen at frame ``t`` (1-based): ON frames pass unless swapped."""
    from .pipelines import PolarizerState, polarizer_signal

    on = polarizer_signal(t) is PolarizerState.ON
    if scene.swap_polarity:
        on = not on
    return ChannelState.PASS if on else ChannelState.BLOCK


def simulate_temporal(scene: SimScene, n_frames: int, transitions=(), fps: float = 30.0):
    """Alternating-polarization sequence.

    Returns a list of (frame, polarizer state, transition flag). Transition
    frames are rendered with undefined (mixed) polarization.
    """
    from .pipelines import polarizer_signal

    if n_frames < 2:
        raise SceneError("a temporal sequence needs at least 2 frames")
    trans = set(int(t) for t in transitions)
    period = int(round(1e6 / fps))
    out = []
    for t in range(1, n_frames + 1):
        state = ChannelState.MIXED if t in trans else polarizer_state(scene, t)
        f = render(scene, state, stream=t).with_timestamp((t - 1) * period)
        out.append((f, polarizer_signal(t), t in trans))
    return out


def simulate_camouflage(scene: SimScene, blocked: bool = True, stream: int = 0) -> Frame:
    """RGB view of a same-color marker through a static blocking polarizer.

    With ``blocked=False`` (control) the ink reflects at the background's
    brightness with a hue offset of a few degrees, i.e. it is camouflaged.
    """
    bg = _background_image(scene, True)
    h0, s0, v0 = scene.background.color_hsv if scene.background.kind != "clutter" else (120.0, 0.7, 0.6)
    if blocked:
        ratio = scene.channel.csr_reflectance_block / scene.channel.csr_reflectance_pass
        ink_rgb = np.array(_hsv_rgb(h0 + scene.camouflage_hue_offset, s0, v0 * ratio))
    else:
        ink_rgb = np.array(_hsv_rgb(h0 + scene.camouflage_hue_offset, s0, v0))
    img = bg
    cov = coverage(scene)
    if cov is not None:
        ink, mk, (x0, y0) = cov
        bh, bw = ink.shape
        box = img[y0:y0 + bh, x0:x0 + bw]
        # substrate under the marker keeps the marker's own color on clutter
        sub = np.array(_hsv_rgb(h0, s0, v0))
        box = box * (1.0 - mk[..., None]) + (mk - ink)[..., None] * sub + ink[..., None] * ink_rgb
        img[y0:y0 + bh, x0:x0 + bw] = box
    img = img * scene.illumination
    return Frame(_finish(img, scene, _rng(scene, 5000 + stream)), FrameFormat.RGB8)


def simulate_uv(scene: SimScene, stream: int = 0) -> Frame:
    """Near-UV grayscale view: ink bright, background dim."""
    w, h = scene.image_size
    img = np.full((h, w), scene.channel.uv_background)
    cov = coverage(scene)
    if cov is not None:
        ink, _, (x0, y0) = cov
        bh, bw = ink.shape
        box = img[y0:y0 + bh, x0:x0 + bw]
        img[y0:y0 + bh, x0:x0 + bw] = box * (1.0 - ink) + ink * scene.channel.csr_reflectance_pass
    img = img * scene.illumination
    return Frame(_finish(img, scene, _rng(scene, 7000 + stream)), FrameFormat.GRAY8)


# --------------------------------------------------------------- scene files

MODES = ("dual", "temporal", "camouflage", "uv")


def _floats(n: int | None):
    def conv(v: str):
        vals = [float(t) for t in v.replace(",", " ").split()]
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} numbers, got {len(vals)}")
        return vals
    return conv


def _bool(v: str) -> bool:
    lv = v.strip().lower()
    if lv in ("1", "true", "yes", "on"):
        return True
    if lv in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v: str):
    return None if v.strip().lower() in ("none", "-") else int(v)


# key -> converter; every key is optional and falls back to the SimScene defaults
SCENE_KEYS = {
    "mode": str, "frames": int, "transitions": lambda v: [int(t) for t in v.replace(",", " ").split()],
    "fps": float, "seed": int,
    "marker_id": _opt_int, "marker_size": float, "dictionary": str,
    "angle_deg": float, "axis": str, "distance": float, "offset": _floats(2),
    "translation": _floats(3), "quaternion": _floats(4),
    "intrinsics": _floats(None), "width": int, "height": int,
    "background": str, "background_albedo": float, "background_albedo2": float,
    "background_hsv": _floats(3), "background_square_px": float, "background_seed": int,
    "background_path": str,
    "csr_reflectance_pass": float, "csr_reflectance_block": float,
    "background_polarization_leak": float, "uv_background": float,
    "gaussian_sigma": float, "salt_pepper_fraction": float, "misalignment": float,
    "illumination": float, "swap_polarity": _bool, "camouflage_hue_offset": float,
    "homography": _floats(9), "calibration_square_px": float,
}


@dataclass(frozen=True)
class SceneSpec:
    """A parsed scene file: the scene plus how to turn it into a dataset."""
    scene: SimScene
    mode: str = "dual"
    frames: int = 10
    transitions: tuple[int, ...] = ()
    fps: float = 30.0
    calibration_square_px: float = 9.0


def parse_scene(text: str, base_dir: str | Path | None = None, overrides: dict | None = None) -> SceneSpec:
    """Parse ``key = value`` lines (``#`` comments) into a :class:`SceneSpec`.

    Errors name the offending line and key.
    """
    raw: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise SceneError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, value = (p.strip() for p in body.split("=", 1))
        if key not in SCENE_KEYS:
            raise SceneError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise SceneError(f"line {lineno}: duplicate key {key!r} (first on line {raw[key][0]})")
        raw[key] = (lineno, value)
    for key, value in (overrides or {}).items():
        if key not in SCENE_KEYS:
            raise SceneError(f"override: unknown key {key!r}")
        raw[key] = (0, str(value))
    vals = {}
    for key, (lineno, value) in raw.items():
        try:
            vals[key] = SCENE_KEYS[key](value)
        except ValueError as exc:
            where = f"line {lineno}" if lineno else "override"
            raise SceneError(f"{where}: bad value for {key!r}: {exc}") from None
    try:
        return _build_spec(vals, Path(base_dir) if base_dir else Path("."))
    except SceneError:
        raise
    except (ValueError, OSError) as exc:
        raise SceneError(str(exc)) from None


def _build_spec(v: dict, base: Path) -> SceneSpec:
    mode = v.get("mode", "dual")
    if mode not in MODES:
        raise SceneError(f"mode must be one of {', '.join(MODES)}")
    if "translation" in v or "quaternion" in v:
        q = v.get("quaternion", [1.0, 0.0, 0.0, 0.0])
        t = v.get("translation", [0.0, 0.0, 0.5])
        pose = Pose6DoF(np.array(q) / np.linalg.norm(q), t)
    else:
        pose = pose_at(v.get("angle_deg", 0.0), v.get("distance", 0.5), v.get("axis", "y"),
                       tuple(v.get("offset", (0.0, 0.0))))
    K = DEFAULT_INTRINSICS
    if "intrinsics" in v:
        if len(v["intrinsics"]) not in (4, 9):
            raise SceneError("intrinsics need 4 or 9 numbers")
        K = CameraIntrinsics(*v["intrinsics"])
    dictionary = None
    if "dictionary" in v:
        p = Path(v["dictionary"])
        dictionary = Dictionary.load(p if p.is_absolute() else base / p)
    bg_path = v.get("background_path")
    if bg_path and not Path(bg_path).is_absolute():
        bg_path = str(base / bg_path)
    bg_defaults = Background()
    background = Background(
        kind=v.get("background", "uniform"),
        albedo=v.get("background_albedo", bg_defaults.albedo),
        albedo2=v.get("background_albedo2", bg_defaults.albedo2),
        color_hsv=tuple(v.get("background_hsv", bg_defaults.color_hsv)),
        square_px=v.get("background_square_px", bg_defaults.square_px),
        seed=v.get("background_seed", 0),
        path=bg_path,
    )
    cm = ChannelModel()
    channel = ChannelModel(**{k: v.get(k, getattr(cm, k)) for k in (
        "csr_reflectance_pass", "csr_reflectance_block", "background_polarization_leak", "uv_background")})
    noise = NoiseModel(v.get("gaussian_sigma", 0.0), v.get("salt_pepper_fraction", 0.0),
                       v.get("misalignment", 0.0))
    kw = {}
    if "homography" in v:
        kw["dual_homography"] = tuple(map(tuple, np.array(v["homography"]).reshape(3, 3)))
    scene = SimScene(
        marker_id=v.get("marker_id", 7),
        marker_pose=pose,
        geometry=MarkerGeometry(v.get("marker_size", 0.07)),
        intrinsics=K,
        image_size=(v.get("width", 1024), v.get("height", 768)),
        background=background, channel=channel, noise=noise,
        illumination=v.get("illumination", 1.0), seed=v.get("seed", 0),
        swap_polarity=v.get("swap_polarity", False),
        camouflage_hue_offset=v.get("camouflage_hue_offset", 3.0),
        dictionary=dictionary, **kw)
    if scene.marker_id is not None and not 0 <= scene.marker_id < len(scene.codebook):
        raise SceneError(f"marker_id {scene.marker_id} outside the dictionary (size {len(scene.codebook)})")
    frames = v.get("frames", 10)
    if frames < 1 or (mode == "temporal" and frames < 2):
        raise SceneError("frames too small for this mode")
    return SceneSpec(scene, mode, frames, tuple(v.get("transitions", ())), v.get("fps", 30.0),
                     v.get("calibration_square_px", 9.0))


def load_scene(path: str | Path, overrides: dict | None = None) -> SceneSpec:
    path = Path(path)
    return parse_scene(path.read_text(), path.parent, overrides)


def example_scene_path() -> Path:
    return Path(__file__).with_name("data") / "example.scene"


# ------------------------------------------------------------------ datasets

def _frame_name(i: int, ext: str) -> str:
    return f"{i:06d}.{ext}"


def write_ground_truth(path: str | Path, rows) -> None:
    """``rows`` of (frame, Pose6DoF) as frame,tx,ty,tz,qw,qx,qy,qz."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame", "tx", "ty", "tz", "qw", "qx", "qy", "qz"])
        for frame, pose in rows:
            wr.writerow([frame, *(repr(float(x)) for x in pose.translation),
                         *(repr(float(x)) for x in pose.rotation)])


def read_ground_truth(path: str | Path) -> dict[int, Pose6DoF]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["frame"])] = Pose6DoF([float(row[k]) for k in ("qw", "qx", "qy", "qz")],
                                              [float(row[k]) for k in ("tx", "ty", "tz")])
    return out


def write_dataset(spec: SceneSpec, out_dir: str | Path) -> Path:
    """Emit the dataset layout the pipelines read, plus ground truth.

    dual: cam1/, cam2/, timestamps.csv, calibration/{cam1,cam2}.pgm;
    temporal: seq/, polarizer.csv; camouflage and uv: frames/.
    Every mode also writes ground_truth.csv and intrinsics.txt.
    """
    from .pipelines import polarizer_signal

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = spec.scene
    period = int(round(1e6 / spec.fps))
    n = spec.frames
    if spec.mode == "dual":
        (out / "cam1").mkdir(exist_ok=True)
        (out / "cam2").mkdir(exist_ok=True)
        (out / "calibration").mkdir(exist_ok=True)
        with open(out / "timestamps.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["frame", "cam1_us", "cam2_us"])
            for i in range(1, n + 1):
                f1, f2, _ = simulate_dual(scene, stream=i)
                write_frame(f1, out / "cam1" / _frame_name(i, "pgm"))
                write_frame(f2, out / "cam2" / _frame_name(i, "pgm"))
                t = (i - 1) * period
                wr.writerow([i, t, t + 150])  # fixed trigger skew of the second camera
        c1, c2 = calibration_pair(scene, spec.calibration_square_px)
        write_frame(c1, out / "calibration" / "cam1.pgm")
        write_frame(c2, out / "calibration" / "cam2.pgm")
    elif spec.mode == "temporal":
        (out / "seq").mkdir(exist_ok=True)
        seq = simulate_temporal(scene, n, spec.transitions, spec.fps)
        with open(out / "polarizer.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["frame", "state", "transition"])
            for i, (f, _, flag) in enumerate(seq, start=1):
                write_frame(f, out / "seq" / _frame_name(i, "pgm"))
                wr.writerow([i, polarizer_signal(i).value, int(flag)])
    else:
        (out / "frames").mkdir(exist_ok=True)
        for i in range(1, n + 1):
            if spec.mode == "camouflage":
                write_frame(simulate_camouflage(scene, stream=i), out / "frames" / _frame_name(i, "ppm"))
            else:
                write_frame(simulate_uv(scene, stream=i), out / "frames" / _frame_name(i, "pgm"))
    if scene.marker_id is not None:
        write_ground_truth(out / "ground_truth.csv", [(i, scene.marker_pose) for i in range(1, n + 1)])
    else:
        write_ground_truth(out / "ground_truth.csv", [])
    scene.intrinsics.save(out / "intrinsics.txt")
    return out
