"""Frames and the pixel operations shared by every detection pipeline.

A :class:`Frame` wraps a read-only numpy array. All operations are pure and
return new frames with the same width and height as their input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import _kernels


class FrameFormat(str, Enum):
    GRAY8 = "GRAY8"
    RGB8 = "RGB8"
    BIN1 = "BIN1"

    @property
    def channels(self) -> int:
        return 3 if self is FrameFormat.RGB8 else 1


class FrameFormatError(ValueError):
    """Raised when an operation receives a frame of the wrong format or size."""


@dataclass(frozen=True, eq=False)
class Frame:
    data: np.ndarray
    format: FrameFormat = FrameFormat.GRAY8
    timestamp: int | None = None  # microseconds

    def __post_init__(self):
        fmt = FrameFormat(self.format)
        arr = np.ascontiguousarray(self.data, dtype=np.uint8)
        expected_ndim = 3 if fmt is FrameFormat.RGB8 else 2
        if arr.ndim != expected_ndim or (fmt is FrameFormat.RGB8 and arr.shape[2] != 3):
            raise FrameFormatError(f"array of shape {arr.shape} is not a {fmt.value} frame")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise FrameFormatError("frames must be at least 1x1")
        if fmt is FrameFormat.BIN1 and np.count_nonzero((arr != 0) & (arr != 255)):
            raise FrameFormatError("BIN1 pixels must be 0 or 255")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "format", fmt)

    @classmethod
    def _owned(cls, arr: np.ndarray, fmt: "FrameFormat", timestamp: int | None = None) -> "Frame":
        # internal fast path for freshly computed, already valid uint8 arrays
        arr.flags.writeable = False
        f = object.__new__(cls)
        object.__setattr__(f, "data", arr)
        object.__setattr__(f, "format", fmt)
        object.__setattr__(f, "timestamp", timestamp)
        return f

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def with_timestamp(self, timestamp: int | None) -> "Frame":
        return Frame(self.data, self.format, timestamp)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.format is other.format and np.array_equal(self.data, other.data)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ColorRangeHSV:
    """HSV window; hue in degrees, saturation and value as fractions.

    ``h_low > h_high`` selects the range that wraps through 0 degrees.
    """

    h_low: float
    h_high: float
    s_low: float = 0.0
    s_high: float = 1.0
    v_low: float = 0.0
    v_high: float = 1.0

    def __post_init__(self):
        for name in ("h_low", "h_high"):
            if not 0.0 <= getattr(self, name) < 360.0:
                raise ValueError(f"{name} must lie in [0, 360)")
        for lo, hi in (("s_low", "s_high"), ("v_low", "v_high")):
            a, b = getattr(self, lo), getattr(self, hi)
            if not (0.0 <= a <= b <= 1.0):
                raise ValueError(f"need 0 <= {lo} <= {hi} <= 1, got {a}, {b}")


@dataclass(frozen=True)
class GrayRange:
    low: int
    high: int

    def __post_init__(self):
        if not (0 <= self.low <= self.high <= 255):
            raise ValueError(f"need 0 <= low <= high <= 255, got ({self.low}, {self.high})")


def _require(f: Frame, *formats: FrameFormat) -> None:
    if f.format not in formats:
        names = "/".join(x.value for x in formats)
        raise FrameFormatError(f"expected a {names} frame, got {f.format.value}")


def gray(data, timestamp=None) -> Frame:
    return Frame(data, FrameFormat.GRAY8, timestamp)


def to_grayscale(f: Frame) -> Frame:
    """Luma 0.299R + 0.587G + 0.114B, rounded half up."""
    _require(f, FrameFormat.RGB8)
    return Frame._owned(_kernels.rgb_to_gray(f.data), FrameFormat.GRAY8, f.timestamp)


def rgb_to_hsv(f: Frame) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexcone HSV planes: hue in degrees [0, 360), saturation and value in [0, 1]."""
    _require(f, FrameFormat.RGB8)
    return _kernels.rgb_to_hsv(f.data)


def subtract_abs(a: Frame, b: Frame) -> Frame:
    _require(a, FrameFormat.GRAY8, FrameFormat.BIN1)
    _require(b, FrameFormat.GRAY8, FrameFormat.BIN1)
    if a.shape != b.shape:
        raise FrameFormatError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = np.maximum(a.data, b.data)
    diff -= np.minimum(a.data, b.data)
    return Frame._owned(diff, FrameFormat.GRAY8, a.timestamp)


def _bin(mask: np.ndarray) -> np.ndarray:
    return np.multiply(mask.view(np.uint8), 255, dtype=np.uint8)


def check_threshold(theta: int) -> int:
    if not 0 <= theta <= 255:
        raise ValueError(f"threshold must lie in [0, 255], got {theta}")
    return int(theta)


def threshold(f: Frame, theta: int) -> Frame:
    """Binarize: pixels >= theta become 255."""
    theta = check_threshold(theta)
    _require(f, FrameFormat.GRAY8, FrameFormat.BIN1)
    return Frame._owned(_bin(f.data >= theta), FrameFormat.BIN1, f.timestamp)


def mask_hsv_planes(h, s, v, r: ColorRangeHSV) -> np.ndarray:
    return _kernels.hsv_mask(h, s, v, r.h_low, r.h_high, r.s_low, r.s_high, r.v_low, r.v_high)


def mask_color(f: Frame, r: ColorRangeHSV) -> Frame:
    """Pixels inside the HSV range become black (0); everything else white."""
    h, s, v = rgb_to_hsv(f)
    return Frame._owned(mask_hsv_planes(h, s, v, r), FrameFormat.BIN1, f.timestamp)


def mask_gray(f: Frame, r: GrayRange) -> Frame:
    """Pixels with intensity inside [low, high] become white (255)."""
    _require(f, FrameFormat.GRAY8)
    inside = (f.data >= r.low) & (f.data <= r.high)
    return Frame._owned(_bin(inside), FrameFormat.BIN1, f.timestamp)


def erode(f: Frame, radius: int = 1, iterations: int = 1) -> Frame:
    """Square min filter of side 2*radius+1 with edge replication."""
    if radius < 1:
        raise ValueError("erosion radius must be >= 1")
    _require(f, FrameFormat.GRAY8, FrameFormat.BIN1)
    if iterations < 1:
        return f
    return Frame._owned(_kernels.min_filter(f.data, int(radius), int(iterations)), f.format, f.timestamp)


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = int(math.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(f: Frame, sigma: float) -> Frame:
    _require(f, FrameFormat.GRAY8, FrameFormat.BIN1)
    out = _kernels.convolve_separable(f.data, gaussian_kernel(sigma))
    return Frame._owned(out, FrameFormat.GRAY8, f.timestamp)


# ---------------------------------------------------------------- file I/O

def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def decode_pnm(buf: bytes, timestamp: int | None = None) -> Frame:
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FrameFormatError(f"unsupported PNM magic {magic!r}")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FrameFormatError("only 8-bit PNM files are supported")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    raw = np.frombuffer(buf, dtype=np.uint8, count=w * h * channels, offset=pos)
    if magic == b"P6":
        return Frame(raw.reshape(h, w, 3), FrameFormat.RGB8, timestamp)
    return Frame(raw.reshape(h, w), FrameFormat.GRAY8, timestamp)


def encode_pnm(f: Frame) -> bytes:
    magic = b"P6" if f.format is FrameFormat.RGB8 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, f.width, f.height)
    return header + f.data.tobytes()


def read_frame(path: str | Path, timestamp: int | None = None) -> Frame:
    """Load a binary PGM (P5) or PPM (P6) file; PNG if Pillow is installed."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        img = Image.open(path)
        if img.mode == "L":
            return Frame(np.asarray(img), FrameFormat.GRAY8, timestamp)
        return Frame(np.asarray(img.convert("RGB")), FrameFormat.RGB8, timestamp)
    return decode_pnm(path.read_bytes(), timestamp)


def write_frame(f: Frame, path: str | Path) -> None:
    Path(path).write_bytes(encode_pnm(f))
