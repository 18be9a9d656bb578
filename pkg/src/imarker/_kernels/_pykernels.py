"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and bit-identical output. This module is the import-time fallback when the
compiled extension is unavailable.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

# Clockwise on screen (y down): E, SE, S, SW, W, NW, N, NE.
DIRS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))

# Bresenham circle of radius 3 used by the segment test, clockwise from top.
RING = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)


def min_filter(img: np.ndarray, radius: int, iterations: int) -> np.ndarray:
    out = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = out.shape
    for _ in range(iterations):
        pad = np.pad(out, ((0, 0), (radius, radius)), mode="edge")
        tmp = pad[:, 0:w].copy()
        for k in range(1, 2 * radius + 1):
            np.minimum(tmp, pad[:, k:k + w], out=tmp)
        pad = np.pad(tmp, ((radius, radius), (0, 0)), mode="edge")
        res = pad[0:h, :].copy()
        for k in range(1, 2 * radius + 1):
            np.minimum(res, pad[k:k + h, :], out=res)
        out = res
    return out


def convolve_separable(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    src = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    r = (kernel.shape[0] - 1) // 2
    h, w = src.shape
    pad = np.pad(src, ((0, 0), (r, r)), mode="edge")
    tmp = kernel[0] * pad[:, 0:w]
    for k in range(1, 2 * r + 1):
        tmp = tmp + kernel[k] * pad[:, k:k + w]
    pad = np.pad(tmp, ((r, r), (0, 0)), mode="edge")
    acc = kernel[0] * pad[0:h, :]
    for k in range(1, 2 * r + 1):
        acc = acc + kernel[k] * pad[k:k + h, :]
    return np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8)


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    c = rgb.astype(np.int32)
    g = (299 * c[..., 0] + 587 * c[..., 1] + 114 * c[..., 2] + 500) // 1000
    return g.astype(np.uint8)


def rgb_to_hsv(rgb: np.ndarray):
    c = rgb.astype(np.float64)
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = mx - mn
    v = mx / 255.0
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    h = np.zeros_like(mx)
    rmax = (mx == r) & (delta > 0)
    gmax = (mx == g) & (delta > 0) & ~rmax
    bmax = (delta > 0) & ~rmax & ~gmax
    h = np.where(rmax, 60.0 * np.mod((g - b) / safe, 6.0), h)
    h = np.where(gmax, 60.0 * ((b - r) / safe + 2.0), h)
    h = np.where(bmax, 60.0 * ((r - g) / safe + 4.0), h)
    h = np.where(h >= 360.0, h - 360.0, h)
    return h, s, v


def hsv_mask(h, s, v, h_low, h_high, s_low, s_high, v_low, v_high) -> np.ndarray:
    """255 outside the range, 0 inside (target color shows as black)."""
    if h_low <= h_high:
        hin = (h >= h_low) & (h <= h_high)
    else:
        hin = (h >= h_low) | (h <= h_high)
    inside = hin & (s >= s_low) & (s <= s_high) & (v >= v_low) & (v <= v_high)
    return np.where(inside, 0, 255).astype(np.uint8)


def fast_scores(gray: np.ndarray, t: int, arc: int = 9) -> np.ndarray:
    """Segment-test corner score map; zero where the test fails."""
    img = gray.astype(np.int32)
    h, w = img.shape
    scores = np.zeros((h, w), dtype=np.int32)
    if h < 7 or w < 7:
        return scores
    c = img[3:h - 3, 3:w - 3]
    ring = np.stack([img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx] for dx, dy in RING])
    diff = ring - c[None]
    brighter = diff > t
    darker = diff < -t
    best = np.zeros(c.shape, dtype=np.int32)
    for cls, sign in ((brighter, 1), (darker, -1)):
        ext = np.concatenate([cls, cls[: arc - 1]], axis=0).astype(np.int8)
        run = np.zeros(c.shape, dtype=np.int32)
        found = np.zeros(c.shape, dtype=bool)
        for k in range(ext.shape[0]):
            run = np.where(ext[k] > 0, run + 1, 0)
            found |= run >= arc
        mag = np.where(cls, sign * diff - t, 0).sum(axis=0).astype(np.int32)
        best = np.where(found & (mag > best), mag, best)
    scores[3:h - 3, 3:w - 3] = best
    return scores


def warp_bilinear(src: np.ndarray, hinv: np.ndarray, out_h: int, out_w: int):
    """Inverse-map warp; returns (image, valid mask)."""
    m = np.asarray(hinv, dtype=np.float64)
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    den = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    sx = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / den
    sy = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / den
    sh, sw = src.shape[:2]
    valid = (sx >= 0) & (sy >= 0) & (sx <= sw - 1) & (sy <= sh - 1) & (den > 0)
    sxv = np.where(valid, sx, 0.0)
    syv = np.where(valid, sy, 0.0)
    x0 = np.minimum(np.floor(sxv).astype(np.intp), sw - 2 if sw > 1 else 0)
    y0 = np.minimum(np.floor(syv).astype(np.intp), sh - 2 if sh > 1 else 0)
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = sxv - x0
    fy = syv - y0
    s = src.astype(np.float64)
    if s.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = s[y0, x0] + fx * (s[y0, x1] - s[y0, x0])
    bot = s[y1, x0] + fx * (s[y1, x1] - s[y1, x0])
    val = top + fy * (bot - top)
    out = np.clip(np.floor(val + 0.5), 0, 255).astype(np.uint8)
    mask = valid if s.ndim == 2 else valid[..., None]
    out = np.where(mask, out, 0).astype(np.uint8)
    return out, valid.astype(np.uint8) * 255


def _trace(fg: np.ndarray, x0: int, y0: int) -> list[tuple[int, int]]:
    h, w = fg.shape

    def on(x, y):
        return 0 <= x < w and 0 <= y < h and fg[y, x]

    def scan(x, y, start):
        for k in range(8):
            d = (start + k) % 8
            dx, dy = DIRS[d]
            if on(x + dx, y + dy):
                return d
        return -1

    d0 = scan(x0, y0, 5)
    pts = [(x0, y0)]
    if d0 < 0:
        return pts
    x, y, d = x0, y0, d0
    while True:
        x += DIRS[d][0]
        y += DIRS[d][1]
        nd = scan(x, y, (d + 5) % 8)
        if x == x0 and y == y0 and nd == d0:
            break
        pts.append((x, y))
        d = nd
    return pts


def trace_components(binary: np.ndarray, min_extent: int):
    """Outer borders of 8-connected foreground (nonzero) components.

    Components are visited in raster order of their first pixel; those whose
    bounding box is smaller than ``min_extent`` on both axes are skipped.
    Returns a list of (n, 2) int32 arrays of (x, y) border pixels.
    """
    fg = np.asarray(binary) != 0
    labels, n = ndimage.label(fg, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return []
    contours = []
    starts = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        if ys.stop - ys.start < min_extent and xs.stop - xs.start < min_extent:
            continue
        first_row = labels[ys.start, xs] == idx
        x0 = xs.start + int(np.argmax(first_row))
        starts.append((ys.start * fg.shape[1] + x0, x0, ys.start))
    for _, x0, y0 in sorted(starts):
        contours.append(np.asarray(_trace(fg, x0, y0), dtype=np.int32))
    return contours
