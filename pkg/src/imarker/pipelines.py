"""The four marker-detection pipelines and their frame plumbing.

* dual: align the second camera's frame onto the first, subtract, threshold,
  post-process, recognize.
* temporal: subtract consecutive frames captured with alternating
  polarization, post-process, recognize.
* mask: HSV conversion, color-range mask, post-process, recognize.
* range: gray-level range mask, post-process, recognize.

Each step is recorded in a :class:`StageTrace` under one of five stage
categories (acquisition, preprocessing, processing, postprocessing,
recognition) so the profiler can attribute time the same way for every
pipeline.
"""

from __future__ import annotations

import csv
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import imgcore
from .align import Homography, calibrate_alignment, warp_perspective
from .imgcore import ColorRangeHSV, Frame, FrameFormat, GrayRange
from .marker import Dictionary, MarkerDetection, default_dictionary, recognize
from .pose import CameraIntrinsics, MarkerGeometry, estimate_pose

STAGES = ("acquisition", "preprocessing", "processing", "postprocessing", "recognition")
PIPELINES = ("dual", "temporal", "mask", "range")


class DatasetError(ValueError):
    """Malformed or empty dataset directory."""


class PolarizerState(str, Enum):
    ON = "ON"
    OFF = "OFF"


def polarizer_signal(t: int) -> PolarizerState:
    """Liquid-crystal drive state for frame ``t`` (1-based): ON on odd frames."""
    if t < 1:
        raise ValueError(f"frame index must be >= 1, got {t}")
    return PolarizerState.ON if t % 2 == 1 else PolarizerState.OFF


@dataclass
class PipelineParams:
    theta: int = 40
    erode_radius: int = 1
    erode_iters: int = 1
    blur_sigma: float = 1.0
    rethreshold: int = 128
    color_range: ColorRangeHSV = field(default_factory=lambda: ColorRangeHSV(90.0, 150.0, 0.3, 1.0, 0.49, 1.0))
    gray_range: GrayRange = field(default_factory=lambda: GrayRange(64, 255))
    invert: bool = False
    min_side: float = 10.0
    refine: bool = True

    def __post_init__(self):
        imgcore.check_threshold(self.theta)
        imgcore.check_threshold(self.rethreshold)
        if self.erode_radius < 1 or self.erode_iters < 0:
            raise ValueError("erosion needs radius >= 1 and iterations >= 0")
        if self.blur_sigma <= 0:
            raise ValueError("blur sigma must be positive")


# ------------------------------------------------------------------- timing

class StageTrace:
    """Ordered log of pipeline steps with per-stage wall-clock totals (ms)."""

    def __init__(self):
        self.steps: list[tuple[str, str, float]] = []

    @contextmanager
    def step(self, name: str, stage: str):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.steps.append((name, stage, (time.perf_counter() - t0) * 1e3))

    def record(self, name: str, stage: str, ms: float) -> None:
        self.steps.append((name, stage, ms))

    @property
    def names(self) -> list[str]:
        return [n for n, _, _ in self.steps]

    def stage_ms(self) -> dict[str, float]:
        out = {s: 0.0 for s in STAGES}
        for _, stage, ms in self.steps:
            out[stage] += ms
        return out


@contextmanager
def _step(trace: StageTrace | None, name: str, stage: str):
    if trace is None:
        yield
    else:
        with trace.step(name, stage):
            yield


# -------------------------------------------------------------- sync/pairs

@dataclass
class SyncedPair:
    f1: Frame
    f2: Frame
    skew: int = 0  # microseconds
    index: int = 0


def pair_frames(F1: Iterable[Frame], F2: Iterable[Frame], tol: int):
    """Greedy nearest-timestamp pairing of two timestamp-ordered streams.

    Returns (pairs, dropped) where ``dropped`` counts frames of either stream
    left without a partner within ``tol`` microseconds.
    """
    a = list(F1)
    b = list(F2)
    pairs: list[SyncedPair] = []
    j = 0
    used = 0
    for i, f1 in enumerate(a):
        t1 = f1.timestamp
        while j + 1 < len(b) and abs(b[j + 1].timestamp - t1) <= abs(b[j].timestamp - t1):
            j += 1
        if j < len(b) and abs(b[j].timestamp - t1) <= tol:
            # the partner must not be closer to the next f1
            nxt = a[i + 1].timestamp if i + 1 < len(a) else None
            if nxt is not None and abs(b[j].timestamp - nxt) < abs(b[j].timestamp - t1):
                continue
            pairs.append(SyncedPair(f1, b[j], b[j].timestamp - t1, i))
            used += 1
            j += 1
    dropped = (len(a) - used) + (len(b) - used)
    return pairs, dropped


# ---------------------------------------------------------------- pipelines

def _postprocess(f: Frame, params: PipelineParams, level: int, trace) -> Frame:
    with _step(trace, "erode", "postprocessing"):
        out = imgcore.erode(f, params.erode_radius, params.erode_iters) if params.erode_iters else f
    with _step(trace, "blur", "postprocessing"):
        out = imgcore.gaussian_blur(out, params.blur_sigma)
    with _step(trace, "binarize", "postprocessing"):
        out = imgcore.threshold(out, level)
    return out


def _recognize(binary: Frame, refine: Frame | None, params, dictionary, trace,
               intrinsics=None, geometry=None) -> list[MarkerDetection]:
    with _step(trace, "recognize", "recognition"):
        dets = recognize(binary, dictionary, refine_image=refine if params.refine else None,
                         min_side=params.min_side, invert=params.invert,
                         edge_offset=0.5 + params.erode_radius * params.erode_iters)
        if intrinsics is not None and geometry is not None:
            for d in dets:
                try:
                    d.pose = estimate_pose(intrinsics, geometry, d)
                except ValueError:
                    d.pose = None
    return dets


def _as_gray(f: Frame) -> Frame:
    return imgcore.to_grayscale(f) if f.format is FrameFormat.RGB8 else f


def detect_dual(pair: SyncedPair, h: Homography, params: PipelineParams | None = None,
                dictionary: Dictionary | None = None, *, trace: StageTrace | None = None,
                intrinsics: CameraIntrinsics | None = None,
                geometry: MarkerGeometry | None = None) -> list[MarkerDetection]:
    """Spatial subtraction between two synchronized, oppositely polarized views.

    ``h`` maps camera-2 pixels onto camera-1 pixels.
    """
    params = params or PipelineParams()
    dictionary = dictionary or default_dictionary()
    if h is None:
        raise ValueError("dual-vision detection needs a calibrated homography")
    with _step(trace, "grayscale", "preprocessing"):
        f1 = _as_gray(pair.f1)
        f2 = _as_gray(pair.f2)
    with _step(trace, "align", "processing"):
        f2w, valid = warp_perspective(f2, h, (f1.width, f1.height), return_valid=True)
    with _step(trace, "subtract", "processing"):
        fp = imgcore.subtract_abs(f2w, f1)
        fp = Frame(np.where(valid > 0, fp.data, 0).astype(np.uint8), FrameFormat.GRAY8)
        diff = fp
    with _step(trace, "threshold", "processing"):
        fp = imgcore.threshold(fp, params.theta)
    fp = _postprocess(fp, params, params.rethreshold, trace)
    return _recognize(fp, diff, params, dictionary, trace, intrinsics, geometry)


class TemporalDetector:
    """Consecutive-frame subtraction for a switchable polarizer.

    Owns the previous-frame slot, so one instance serves one stream.
    """

    def __init__(self, params: PipelineParams | None = None, dictionary: Dictionary | None = None,
                 intrinsics: CameraIntrinsics | None = None, geometry: MarkerGeometry | None = None):
        self.params = params or PipelineParams()
        self.dictionary = dictionary or default_dictionary()
        self.intrinsics = intrinsics
        self.geometry = geometry
        self.prev: Frame | None = None

    def reset(self) -> None:
        self.prev = None

    def process(self, f: Frame, transition: bool = False,
                trace: StageTrace | None = None) -> list[MarkerDetection] | None:
        """Detections for frame ``f``; None for the priming or a skipped frame."""
        if transition:
            return None
        with _step(trace, "grayscale", "preprocessing"):
            cur = _as_gray(f)
        if self.prev is None:
            self.prev = cur
            return None
        with _step(trace, "subtract", "processing"):
            diff = imgcore.subtract_abs(cur, self.prev)
        self.prev = cur
        with _step(trace, "threshold", "processing"):
            fp = imgcore.threshold(diff, self.params.theta)
        fp = _postprocess(fp, self.params, self.params.rethreshold, trace)
        return _recognize(fp, diff, self.params, self.dictionary, trace, self.intrinsics, self.geometry)


def detect_temporal(stream: Iterable, params: PipelineParams | None = None,
                    dictionary: Dictionary | None = None, **kw) -> Iterator[tuple[int, list[MarkerDetection]]]:
    """Run the temporal pipeline over ``stream``.

    Items are frames or (frame, transition_flag) tuples. Yields
    (frame index, detections) for every frame that produced a subtraction.
    """
    det = TemporalDetector(params, dictionary, kw.get("intrinsics"), kw.get("geometry"))
    for i, item in enumerate(stream, start=1):
        f, flag = item if isinstance(item, tuple) else (item, False)
        out = det.process(f, bool(flag))
        if out is not None:
            yield i, out


def detect_mask(f: Frame, params: PipelineParams | None = None, dictionary: Dictionary | None = None,
                *, trace: StageTrace | None = None, intrinsics=None, geometry=None) -> list[MarkerDetection]:
    """Static single camera, visible range: HSV color-range masking."""
    params = params or PipelineParams()
    dictionary = dictionary or default_dictionary()
    with _step(trace, "hsv", "preprocessing"):
        h, s, v = imgcore.rgb_to_hsv(f)
    with _step(trace, "color_mask", "processing"):
        fp = Frame(imgcore.mask_hsv_planes(h, s, v, params.color_range), FrameFormat.BIN1)
    refine = None
    if params.refine:
        refine = Frame(np.clip(np.floor(v * 255.0 + 0.5), 0, 255).astype(np.uint8), FrameFormat.GRAY8)
    fp = _postprocess(fp, params, params.rethreshold, trace)
    return _recognize(fp, refine, params, dictionary, trace, intrinsics, geometry)


def detect_range(f: Frame, params: PipelineParams | None = None, dictionary: Dictionary | None = None,
                 *, trace: StageTrace | None = None, intrinsics=None, geometry=None) -> list[MarkerDetection]:
    """Static single camera, UV/IR range: gray-level range masking."""
    params = params or PipelineParams()
    dictionary = dictionary or default_dictionary()
    with _step(trace, "gray_check", "preprocessing"):
        g = _as_gray(f)
    with _step(trace, "range_mask", "processing"):
        fp = imgcore.mask_gray(g, params.gray_range)
    fp = _postprocess(fp, params, params.rethreshold, trace)
    return _recognize(fp, g, params, dictionary, trace, intrinsics, geometry)


# ------------------------------------------------------------------ datasets

def _frame_files(d: Path) -> list[Path]:
    if not d.is_dir():
        return []
    return sorted(p for p in d.iterdir() if p.suffix.lower() in (".pgm", ".ppm", ".png"))


@dataclass
class FrameResult:
    frame: int
    pipeline: str
    detections: list[MarkerDetection]
    stage_ms: dict[str, float] | None

    def to_json_lines(self) -> list[str]:
        out = []
        for d in self.detections:
            out.append(json.dumps({
                "frame": self.frame,
                "pipeline": self.pipeline,
                "id": int(d.id),
                "corners": [[round(float(x), 4), round(float(y), 4)] for x, y in d.ordered_corners],
                "pose": None if d.pose is None else {
                    "t": [round(float(v), 9) for v in d.pose.translation],
                    "q": [round(float(v), 9) for v in d.pose.rotation],
                },
                "stage_ms": None if self.stage_ms is None else
                {k: round(v, 3) for k, v in self.stage_ms.items()},
            }, sort_keys=False))
        return out


def _load(path: Path, trace: StageTrace, timestamp=None) -> Frame:
    with trace.step("load", "acquisition"):
        return imgcore.read_frame(path, timestamp)


def read_timestamps(path: Path) -> dict[int, tuple[int, int]]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["frame"])] = (int(row["cam1_us"]), int(row["cam2_us"]))
    return out


def read_polarizer(path: Path) -> dict[int, tuple[str, bool]]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["frame"])] = (row["state"], row["transition"].strip().lower() in ("1", "true", "yes"))
    return out


def dataset_homography(root: str | Path) -> Homography:
    """Calibrate the inter-camera homography from ``root/calibration``."""
    d = Path(root) / "calibration"
    if not (d / "cam1.pgm").is_file() or not (d / "cam2.pgm").is_file():
        raise DatasetError(f"{d}: missing calibration views cam1.pgm / cam2.pgm")
    return calibrate_alignment(imgcore.read_frame(d / "cam1.pgm"), imgcore.read_frame(d / "cam2.pgm"))


def run_dataset(pipeline: str, root: str | Path, params: PipelineParams | None = None,
                dictionary: Dictionary | None = None, *, homography: Homography | None = None,
                intrinsics: CameraIntrinsics | None = None, geometry: MarkerGeometry | None = None,
                fps: float = 30.0, limit: int | None = None) -> Iterator[FrameResult]:
    """Run a pipeline over a dataset directory, frame by frame.

    Layouts: ``cam1/``, ``cam2/`` and ``timestamps.csv`` for dual;
    ``seq/`` and ``polarizer.csv`` for temporal; ``frames/`` for mask and range.
    """
    root = Path(root)
    params = params or PipelineParams()
    dictionary = dictionary or default_dictionary()
    kw = dict(intrinsics=intrinsics, geometry=geometry)
    if pipeline == "dual":
        if homography is None:
            raise DatasetError("dual pipeline needs a calibration homography")
        c1, c2 = _frame_files(root / "cam1"), _frame_files(root / "cam2")
        if not c1 or not c2:
            raise DatasetError(f"{root}: no frames in cam1/ or cam2/")
        ts_path = root / "timestamps.csv"
        period = int(round(1e6 / fps))
        stamps = read_timestamps(ts_path) if ts_path.exists() else {}
        # pair on timestamps first, then load only the paired files
        t1 = [stamps.get(int(p.stem), (k * period, 0))[0] for k, p in enumerate(c1)]
        t2 = [stamps.get(int(p.stem), (0, k * period))[1] for k, p in enumerate(c2)]
        j = 0
        n = 0
        for i, p1 in enumerate(c1):
            while j + 1 < len(c2) and abs(t2[j + 1] - t1[i]) <= abs(t2[j] - t1[i]):
                j += 1
            if abs(t2[j] - t1[i]) > period // 2:
                continue
            trace = StageTrace()
            f1 = _load(p1, trace, t1[i])
            f2 = _load(c2[j], trace, t2[j])
            pair = SyncedPair(f1, f2, t2[j] - t1[i], i)
            dets = detect_dual(pair, homography, params, dictionary, trace=trace, **kw)
            yield FrameResult(int(p1.stem), "dual", dets, trace.stage_ms())
            n += 1
            if limit and n >= limit:
                return
    elif pipeline == "temporal":
        files = _frame_files(root / "seq")
        if not files:
            raise DatasetError(f"{root}: no frames in seq/")
        pol_path = root / "polarizer.csv"
        pol = read_polarizer(pol_path) if pol_path.exists() else {}
        det = TemporalDetector(params, dictionary, intrinsics, geometry)
        n = 0
        for p in files:
            idx = int(p.stem)
            trace = StageTrace()
            f = _load(p, trace)
            out = det.process(f, pol.get(idx, ("", False))[1], trace)
            if out is None:
                continue
            yield FrameResult(idx, "temporal", out, trace.stage_ms())
            n += 1
            if limit and n >= limit:
                return
    elif pipeline in ("mask", "range"):
        files = _frame_files(root / "frames")
        if not files:
            raise DatasetError(f"{root}: no frames in frames/")
        fn = detect_mask if pipeline == "mask" else detect_range
        for n, p in enumerate(files, start=1):
            trace = StageTrace()
            f = _load(p, trace)
            dets = fn(f, params, dictionary, trace=trace, **kw)
            yield FrameResult(int(p.stem), pipeline, dets, trace.stage_ms())
            if limit and n >= limit:
                return
    else:
        raise ValueError(f"unknown pipeline {pipeline!r}")
