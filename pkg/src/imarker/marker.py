"""Square-marker recognition on binary frames.

Recognition runs in four steps: trace the outer border of every connected
white component, simplify it to a convex quadrilateral, sample the cell grid
through the quad's homography, and look the payload up in a dictionary with
Hamming-distance error correction.

Bit convention: 1 is a light cell, 0 a dark cell. A marker's border ring is
dark. In the pipelines' binary frames the marker ink (the dark cells of the
printed layout) shows up white, so those frames are sampled with
``bright_ink=True``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .align import DegenerateConfigurationError, dlt_homography
from .imgcore import Frame, FrameFormat

BORDER_DARK_FRACTION = 0.85
DP_EPSILON_FRACTION = 0.02
MAX_REJECTIONS = 1_000_000


class DictionaryExhaustedError(RuntimeError):
    """Requested dictionary size could not be reached."""


class DictionaryInvariantError(ValueError):
    """Markers are closer than the declared minimum distance."""


# ---------------------------------------------------------------- dictionary

def _rotations(bits: np.ndarray) -> np.ndarray:
    return np.stack([np.rot90(bits, k) for k in range(4)])


def rotation_min_distance(a: np.ndarray, b: np.ndarray) -> int:
    """min over the four rotations of ``b`` of the Hamming distance to ``a``."""
    return int(min(np.count_nonzero(a != r) for r in _rotations(b)))


def self_rotation_distance(a: np.ndarray) -> int:
    return int(min(np.count_nonzero(a != np.rot90(a, k)) for k in (1, 2, 3)))


def _row_transitions(bits: np.ndarray) -> np.ndarray:
    return np.count_nonzero(bits[:, 1:] != bits[:, :-1], axis=1)


@dataclass(frozen=True, eq=False)
class Dictionary:
    grid_n: int
    markers: np.ndarray  # (count, grid_n, grid_n) of {0, 1}
    min_hamming: int

    def __post_init__(self):
        m = np.asarray(self.markers, dtype=np.uint8).reshape(-1, self.grid_n, self.grid_n)
        m.flags.writeable = False
        object.__setattr__(self, "markers", m)

    def __len__(self) -> int:
        return len(self.markers)

    @functools.cached_property
    def _rotated_flat(self) -> np.ndarray:
        # (count, 4, n*n): rotation k of every marker
        return np.stack([_rotations(b).reshape(4, -1) for b in self.markers]) if len(self) else \
            np.zeros((0, 4, self.grid_n ** 2), dtype=np.uint8)

    @property
    def correction_budget(self) -> int:
        return max(0, (self.min_hamming - 1) // 2)

    def marker_bits(self, marker_id: int) -> np.ndarray:
        """Full (grid_n+2)^2 bit matrix including the dark border ring."""
        n = self.grid_n
        full = np.zeros((n + 2, n + 2), dtype=np.uint8)
        full[1:-1, 1:-1] = self.markers[marker_id]
        return full

    def verify(self) -> int:
        """Exhaustively check the distance invariant; return the observed minimum."""
        observed = self.grid_n ** 2
        for i, a in enumerate(self.markers):
            observed = min(observed, self_rotation_distance(a))
            for b in self.markers[:i]:
                observed = min(observed, rotation_min_distance(a, b))
        if len(self) and observed < self.min_hamming:
            raise DictionaryInvariantError(f"dictionary distance {observed} below declared {self.min_hamming}")
        return observed

    def to_text(self) -> str:
        width = math.ceil(self.grid_n ** 2 / 4)
        lines = [f"imdict v1 grid_n={self.grid_n} min_h={self.min_hamming}"]
        for b in self.markers:
            value = int("".join(str(int(v)) for v in b.ravel()), 2)
            lines.append(f"{value:0{width}x}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, grid_n: int | None = None) -> "Dictionary":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
        min_h = None
        if lines and lines[0].startswith("imdict"):
            head = dict(tok.split("=", 1) for tok in lines[0].split()[2:] if "=" in tok)
            grid_n = int(head["grid_n"])
            min_h = int(head["min_h"])
            lines = lines[1:]
        if grid_n is None:
            if not lines:
                raise ValueError("cannot infer grid size from an empty dictionary")
            grid_n = math.isqrt(len(lines[0]) * 4)
            if grid_n * grid_n != len(lines[0]) * 4:
                raise ValueError("hex width does not match a square grid; pass grid_n")
        nbits = grid_n * grid_n
        markers = []
        for ln in lines:
            value = int(ln, 16)
            if value >> nbits:
                raise ValueError(f"marker {ln} has more than {nbits} bits")
            markers.append([(value >> (nbits - 1 - k)) & 1 for k in range(nbits)])
        arr = np.array(markers, dtype=np.uint8).reshape(-1, grid_n, grid_n)
        if min_h is None:
            probe = cls(grid_n, arr, 0)
            min_h = probe.verify() if len(arr) else 0
        d = cls(grid_n, arr, min_h)
        d.verify()
        return d

    @classmethod
    def load(cls, path: str | Path, grid_n: int | None = None) -> "Dictionary":
        return cls.from_text(Path(path).read_text(), grid_n)


def generate_dictionary(count: int, grid_n: int = 4, min_hamming: int = 4, seed: int = 0) -> Dictionary:
    """Greedy randomized dictionary with a guaranteed rotation-minimal distance.

    Candidates need at least two bit transitions per row and a distance of at
    least ``min_hamming`` to their own rotations and to every accepted marker.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if 4 * count > 2 ** (grid_n * grid_n):
        raise DictionaryExhaustedError(f"{count} markers cannot fit in a {grid_n}x{grid_n} grid")
    rng = np.random.default_rng(seed)
    need_transitions = min(2, grid_n - 1)
    accepted: list[np.ndarray] = []
    pool = np.zeros((0, grid_n * grid_n), dtype=np.uint8)
    rejected = 0
    while len(accepted) < count:
        cand = rng.integers(0, 2, size=(grid_n, grid_n), dtype=np.uint8)
        ok = (_row_transitions(cand) >= need_transitions).all()
        ok = ok and self_rotation_distance(cand) >= min_hamming
        if ok and len(pool):
            ok = np.count_nonzero(pool != cand.ravel(), axis=1).min() >= min_hamming
        if not ok:
            rejected += 1
            if rejected >= MAX_REJECTIONS:
                raise DictionaryExhaustedError(
                    f"gave up after {rejected} rejected candidates with {len(accepted)} markers")
            continue
        accepted.append(cand)
        pool = np.concatenate([pool, _rotations(cand).reshape(4, -1)])
    return Dictionary(grid_n, np.array(accepted, dtype=np.uint8).reshape(-1, grid_n, grid_n), min_hamming)


DEFAULT_DICT_SEED = 14


@functools.lru_cache(maxsize=None)
def default_dictionary() -> Dictionary:
    """The bundled 4x4 dictionary of 50 markers with minimum distance 4."""
    path = Path(__file__).with_name("data") / "imdict_4x4_50.txt"
    if path.exists():
        return Dictionary.load(path)
    return generate_dictionary(50, 4, 4, seed=DEFAULT_DICT_SEED)


# -------------------------------------------------------------------- decode

@dataclass(frozen=True)
class DecodeResult:
    id: int | None
    rotation: int = 0  # degrees, multiple of 90
    distance: int = 0
    reason: str | None = None  # "border" or "distance" on rejection

    @property
    def ok(self) -> bool:
        return self.id is not None


def decode(bits: np.ndarray, dictionary: Dictionary) -> DecodeResult:
    """Identify a sampled (grid_n+2)^2 bit matrix.

    ``rotation`` is k*90 where ``np.rot90(marker, k)`` is the sampled payload.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    n = dictionary.grid_n
    if bits.shape != (n + 2, n + 2):
        raise ValueError(f"expected a {(n + 2, n + 2)} bit matrix, got {bits.shape}")
    ring = np.concatenate([bits[0], bits[-1], bits[1:-1, 0], bits[1:-1, -1]])
    if np.count_nonzero(ring == 0) < BORDER_DARK_FRACTION * ring.size:
        return DecodeResult(None, reason="border")
    if len(dictionary) == 0:
        return DecodeResult(None, reason="distance")
    payload = bits[1:-1, 1:-1].ravel()
    dist = np.count_nonzero(dictionary._rotated_flat != payload, axis=2)
    idx = int(np.argmin(dist))
    marker_id, k = divmod(idx, 4)
    best = int(dist[marker_id, k])
    if best > dictionary.correction_budget:
        return DecodeResult(None, distance=best, reason="distance")
    return DecodeResult(marker_id, 90 * k, best)


# ---------------------------------------------------------------------- quads

@dataclass(frozen=True, eq=False)
class Quad:
    """Four corners in image coordinates, ordered TL, TR, BR, BL as seen on screen."""

    corners: np.ndarray

    def __post_init__(self):
        c = np.array(self.corners, dtype=np.float64).reshape(4, 2)
        c.flags.writeable = False
        object.__setattr__(self, "corners", c)

    @property
    def min_side(self) -> float:
        c = self.corners
        return float(min(np.linalg.norm(c[i] - c[(i + 1) % 4]) for i in range(4)))


def _is_convex(c: np.ndarray) -> bool:
    signs = []
    for i in range(4):
        a, b, d = c[i], c[(i + 1) % 4], c[(i + 2) % 4]
        u, v = b - a, d - b
        signs.append(u[0] * v[1] - u[1] * v[0])
    signs = np.array(signs)
    return bool((signs > 0).all() or (signs < 0).all())


def _dp_open(pts: np.ndarray, eps: float) -> list[int]:
    """Douglas-Peucker on an open polyline; returns kept indices (with ends)."""
    keep = [0, len(pts) - 1]
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        a, b = pts[i], pts[j]
        seg = pts[i + 1:j]
        d = b - a
        norm = math.hypot(d[0], d[1])
        if norm == 0:
            dist = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
        else:
            dist = np.abs(d[0] * (seg[:, 1] - a[1]) - d[1] * (seg[:, 0] - a[0])) / norm
        k = int(np.argmax(dist))
        if dist[k] > eps:
            m = i + 1 + k
            keep.append(m)
            stack.append((i, m))
            stack.append((m, j))
    return sorted(set(keep))


def approx_polygon(contour: np.ndarray, eps: float) -> np.ndarray:
    """Douglas-Peucker simplification of a closed contour; returns vertex indices."""
    pts = contour.astype(np.float64)
    n = len(pts)
    if n < 3:
        return np.arange(n)
    a = int(np.argmax(((pts - pts[0]) ** 2).sum(axis=1)))
    b = int(np.argmax(((pts - pts[a]) ** 2).sum(axis=1)))
    i, j = sorted((a, b))
    if i == j:
        return np.array([i])
    first = [i + k for k in _dp_open(pts[i:j + 1], eps)]
    wrap = np.concatenate([pts[j:], pts[:i + 1]])
    second = [(j + k) % n for k in _dp_open(wrap, eps)]
    idx = list(dict.fromkeys(first + second[1:-1]))
    # drop vertices that became collinear with their neighbours
    changed = True
    while changed and len(idx) > 3:
        changed = False
        for t in range(len(idx)):
            p0, p1, p2 = pts[idx[t - 1]], pts[idx[t]], pts[idx[(t + 1) % len(idx)]]
            d = p2 - p0
            norm = math.hypot(d[0], d[1])
            if norm > 0 and abs(d[0] * (p1[1] - p0[1]) - d[1] * (p1[0] - p0[0])) / norm <= eps:
                idx.pop(t)
                changed = True
                break
    return np.array(idx)


def _fit_side(pts: np.ndarray):
    """Total-least-squares line (point, unit direction) through contour points."""
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c)
    return c, vt[0]


def _intersect(p1, d1, p2, d2):
    a = np.array([[d1[0], -d2[0]], [d1[1], -d2[1]]])
    if abs(np.linalg.det(a)) < 1e-9:
        return None
    s = np.linalg.solve(a, p2 - p1)
    return p1 + s[0] * d1


def _subpixel_quad(contour: np.ndarray, vidx: np.ndarray, offset: float = 0.5) -> np.ndarray:
    """Corners from line fits to each side, pushed ``offset`` px outward.

    Border pixels sit half a pixel inside the true edge of the region; a
    caller that eroded the mask adds the erosion depth on top.
    """
    pts = contour.astype(np.float64)
    n = len(pts)
    verts = pts[vidx]
    centroid = verts.mean(axis=0)
    lines = []
    for s in range(4):
        i0, i1 = int(vidx[s]), int(vidx[(s + 1) % 4])
        seg_idx = np.arange(i0, i1 + (n if i1 <= i0 else 0) + 1) % n
        seg = pts[seg_idx]
        trim = max(1, int(0.1 * len(seg)))
        inner = seg[trim:len(seg) - trim] if len(seg) > 2 * trim + 2 else seg
        if len(inner) < 2:
            lines.append(None)
            continue
        p, d = _fit_side(inner)
        normal = np.array([-d[1], d[0]])
        if normal @ (p - centroid) < 0:
            normal = -normal
        lines.append((p + offset * normal, d))
    out = verts.copy()
    for s in range(4):
        la, lb = lines[s - 1], lines[s]
        if la is None or lb is None:
            continue
        x = _intersect(la[0], la[1], lb[0], lb[1])
        # erosion blunts acute corners, so judge the intersection by its
        # distance to the traced boundary rather than to the polygon vertex
        if x is not None and np.sqrt(((pts - x) ** 2).sum(axis=1).min()) < 2.0 + 1.5 * offset:
            out[s] = x
    return out


def _order_corners(c: np.ndarray) -> np.ndarray:
    area2 = sum(c[i, 0] * c[(i + 1) % 4, 1] - c[(i + 1) % 4, 0] * c[i, 1] for i in range(4))
    if area2 < 0:  # counter-clockwise on screen: reverse to TL, TR, BR, BL order
        c = c[::-1]
    start = int(np.argmin(c[:, 0] + c[:, 1]))
    return np.roll(c, -start, axis=0)


def find_quads(f: Frame, min_side: float = 10.0, invert: bool = False,
               edge_offset: float = 0.5) -> list[Quad]:
    """Convex quadrilateral outlines of white components in a binary frame.

    With ``invert`` the dark components are scanned as well (after the white
    ones). ``edge_offset`` is the outward shift from boundary pixel centres
    to the fitted edge.
    """
    data = np.asarray(f.data)
    if data.ndim != 2:
        raise ValueError("find_quads needs a single-channel frame")
    layers = [data >= 128]
    if invert:
        layers.append(data < 128)
    h, w = data.shape
    quads: list[Quad] = []
    for fg in layers:
        for contour in _kernels.trace_components(fg.astype(np.uint8), max(2, int(min_side * 0.7))):
            q = _contour_to_quad(contour, min_side, w, h, edge_offset)
            if q is not None:
                quads.append(q)
    return quads


def _contour_to_quad(contour: np.ndarray, min_side: float, w: int, h: int,
                     edge_offset: float = 0.5) -> Quad | None:
    if len(contour) < 4 * min_side * 0.7:
        return None
    xs, ys = contour[:, 0], contour[:, 1]
    if xs.min() <= 0 or ys.min() <= 0 or xs.max() >= w - 1 or ys.max() >= h - 1:
        return None
    closed = np.vstack([contour, contour[:1]]).astype(np.float64)
    perimeter = float(np.hypot(*np.diff(closed, axis=0).T).sum())
    vidx = approx_polygon(contour, DP_EPSILON_FRACTION * perimeter)
    if len(vidx) != 4:
        return None
    vidx = np.sort(vidx)
    corners = _subpixel_quad(contour, vidx, edge_offset)
    if not _is_convex(corners):
        return None
    corners = _order_corners(corners)
    corners[:, 0] = np.clip(corners[:, 0], 0, w - 1)
    corners[:, 1] = np.clip(corners[:, 1], 0, h - 1)
    q = Quad(corners)
    if q.min_side < min_side:
        return None
    return q


def sample_bits(f: Frame, quad: Quad, grid_n: int, bright_ink: bool = False) -> np.ndarray:
    """Sample the (grid_n+2)^2 cell grid inside ``quad`` by majority vote.

    Each cell is read over its central 60%. With ``bright_ink`` the frame's
    white pixels are treated as the marker's dark cells.
    """
    cells = grid_n + 2
    canon = np.array([[0, 0], [cells, 0], [cells, cells], [0, cells]], dtype=np.float64)
    try:
        hmg = dlt_homography(canon, quad.corners)
    except DegenerateConfigurationError:
        raise
    side = max(quad.min_side, 1.0) / cells
    m = int(np.clip(round(0.6 * side), 3, 9))
    offs = 0.2 + 0.6 * (np.arange(m) + 0.5) / m
    cu, ou = np.meshgrid(np.arange(cells), offs, indexing="ij")
    u = (cu + ou).ravel()  # per column: cells*m positions
    uu, vv = np.meshgrid(u, u)  # rows follow v
    pts = hmg.apply(np.stack([uu.ravel(), vv.ravel()], axis=1))
    data = f.data if f.data.ndim == 2 else f.data[..., 1]
    hgt, wid = data.shape
    xi = np.clip(np.rint(pts[:, 0]).astype(np.intp), 0, wid - 1)
    yi = np.clip(np.rint(pts[:, 1]).astype(np.intp), 0, hgt - 1)
    light = data[yi, xi] >= 128
    if bright_ink:
        light = ~light
    votes = light.reshape(cells, m, cells, m).sum(axis=(1, 3))
    return (votes * 2 > m * m).astype(np.uint8)


# --------------------------------------------------------------- refinement

def _refine_one(img: np.ndarray, c: np.ndarray, half: int, max_iter: int):
    h, w = img.shape
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1]
    weight = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * (half / 1.5) ** 2)).ravel()
    cur = c.astype(np.float64).copy()
    step = np.inf
    for _ in range(max_iter):
        cx, cy = int(round(cur[0])), int(round(cur[1]))
        if cx - half - 1 < 0 or cy - half - 1 < 0 or cx + half + 1 >= w or cy + half + 1 >= h:
            return c, False
        patch = img[cy - half - 1:cy + half + 2, cx - half - 1:cx + half + 2]
        gx = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2]).ravel()
        gy = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1]).ravel()
        qx = (cx + xx).ravel().astype(np.float64)
        qy = (cy + yy).ravel().astype(np.float64)
        a = weight * gx * gx
        b = weight * gx * gy
        d = weight * gy * gy
        g = np.array([[a.sum(), b.sum()], [b.sum(), d.sum()]])
        ev = np.linalg.eigvalsh(g)
        if ev[0] <= 1e-6 * max(ev[1], 1e-12):
            return c, False
        rhs = np.array([(a * qx + b * qy).sum(), (b * qx + d * qy).sum()])
        new = np.linalg.solve(g, rhs)
        delta = new - cur
        dn = float(np.hypot(*delta))
        if dn > 0.5:
            delta *= 0.5 / dn
        cur = cur + delta
        step = min(dn, 0.5)
        if step < 1e-3:
            break
    # corner quality: gradients should be orthogonal to (q - corner)
    cx, cy = int(round(cur[0])), int(round(cur[1]))
    if cx - half - 1 < 0 or cy - half - 1 < 0 or cx + half + 1 >= w or cy + half + 1 >= h:
        return c, False
    patch = img[cy - half - 1:cy + half + 2, cx - half - 1:cx + half + 2]
    gx = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2]).ravel()
    gy = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1]).ravel()
    rx = (cx + xx).ravel() - cur[0]
    ry = (cy + yy).ravel() - cur[1]
    num = (weight * (gx * rx + gy * ry) ** 2).sum()
    den = (weight * (gx * gx + gy * gy) * (rx * rx + ry * ry)).sum()
    converged = step < 0.05 and den > 0 and num / den < 0.15
    if not converged or np.hypot(*(cur - c)) > 2.0 * half:
        return c, False
    return cur, True


def refine_corners(f: Frame, corners, half_window: int = 5, max_iter: int = 10,
                   return_status: bool = False):
    """Sub-pixel corner positions from local gradient orthogonality.

    Each corner moves at most 0.5 px per iteration for up to ``max_iter``
    iterations in a (2*half_window+1)^2 window. Corners that do not converge
    (flat or noisy windows, frame border) are returned unchanged.
    """
    img = f.data if f.data.ndim == 2 else f.data.mean(axis=2)
    img = img.astype(np.float64)
    pts = np.asarray(corners, dtype=np.float64).reshape(-1, 2)
    out = pts.copy()
    ok = np.zeros(len(pts), dtype=bool)
    for i, c in enumerate(pts):
        out[i], ok[i] = _refine_one(img, c, half_window, max_iter)
    if return_status:
        return out, ok
    return out


# --------------------------------------------------------------- recognition

@dataclass
class MarkerDetection:
    id: int
    corners: np.ndarray  # (4, 2) in quad order
    rotation: int = 0  # degrees
    decode_hamming: int = 0
    pose: object | None = None
    polarity: str = "bright"

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=np.float64).reshape(4, 2)

    @property
    def ordered_corners(self) -> np.ndarray:
        """Corners starting at the marker's own top-left, in TL, TR, BR, BL order."""
        return np.roll(self.corners, (self.rotation // 90) % 4, axis=0)


def recognize(f: Frame, dictionary: Dictionary, *, refine_image: Frame | None = None,
              min_side: float = 10.0, invert: bool = False,
              edge_offset: float = 0.5) -> list[MarkerDetection]:
    """Find and decode markers in a binary frame whose marker ink is white.

    ``refine_image`` (grayscale, same size) is used for sub-pixel corner
    refinement when given. With ``invert`` dark-ink markers are also tried.
    ``edge_offset`` is forwarded to the quad fit (see :func:`find_quads`).
    """
    data = np.asarray(f.data)
    h, w = data.shape[:2]
    layers = [(data >= 128, True)]
    if invert:
        layers.append((data < 128, False))
    found: list[MarkerDetection] = []
    for fg, bright in layers:
        for contour in _kernels.trace_components(fg.astype(np.uint8), max(2, int(min_side * 0.7))):
            quad = _contour_to_quad(contour, min_side, w, h, edge_offset)
            if quad is None:
                continue
            try:
                bits = sample_bits(f, quad, dictionary.grid_n, bright_ink=bright)
            except DegenerateConfigurationError:
                continue
            res = decode(bits, dictionary)
            if not res.ok:
                continue
            corners = quad.corners
            if refine_image is not None:
                corners = _refine_quad(refine_image, corners, dictionary.grid_n)
            found.append(MarkerDetection(res.id, corners, res.rotation, res.distance,
                                         polarity="bright" if bright else "dark"))
    return _dedupe(found)


def _refine_quad(img: Frame, corners: np.ndarray, grid_n: int = 4) -> np.ndarray:
    """Refit each side to sub-pixel gray-level edge crossings and intersect.

    Profiles are taken across the side at evenly spaced stations; each edge
    point sits where an ideal step with the profile's plateaus and area would
    switch.
    Sides with too few clean crossings keep the binary fit.
    """
    from scipy import ndimage

    h, w = img.data.shape[:2]
    c = np.asarray(corners, dtype=np.float64)
    centre = c.mean(axis=0)
    sides = np.hypot(*np.diff(np.vstack([c, c[:1]]), axis=0).T)
    reach = float(np.clip(0.45 * sides.min() / (grid_n + 2), 1.0, 3.0))
    offs = np.arange(-reach, reach + 1e-9, 0.125)
    # only the quad's neighbourhood is ever sampled
    x0, y0 = (max(0, int(np.floor(c[:, i].min() - reach)) - 2) for i in (0, 1))
    x1 = min(w, int(np.ceil(c[:, 0].max() + reach)) + 3)
    y1 = min(h, int(np.ceil(c[:, 1].max() + reach)) + 3)
    data = np.asarray(img.data[y0:y1, x0:x1], dtype=np.float64)
    if data.ndim == 3:
        data = data.mean(axis=2)
    lines = []
    for s in range(4):
        p0, p1 = c[s], c[(s + 1) % 4]
        d = p1 - p0
        length = float(np.hypot(*d))
        d = d / length
        nrm = np.array([-d[1], d[0]])
        if nrm @ (0.5 * (p0 + p1) - centre) < 0:
            nrm = -nrm  # outward
        k = int(np.clip(length / 2, 4, 60))
        ts = np.linspace(0.15, 0.85, k) * length
        base = p0[None] + ts[:, None] * d[None]
        pts = base[:, None, :] + offs[None, :, None] * nrm[None, None, :]
        if pts[..., 0].min() < 0 or pts[..., 1].min() < 0 or pts[..., 0].max() > w - 1 \
                or pts[..., 1].max() > h - 1:
            lines.append(None)
            continue
        prof = ndimage.map_coordinates(data, [pts[..., 1].ravel() - y0, pts[..., 0].ravel() - x0],
                                       order=1).reshape(k, len(offs))
        q = max(2, len(offs) // 6)
        inner = prof[:, :q].mean(axis=1)
        outer = prof[:, -q:].mean(axis=1)
        contrast = outer - inner
        ok = np.abs(contrast) >= 20
        z = (prof - inner[:, None]) / np.where(ok, contrast, 1.0)[:, None]
        ok &= np.count_nonzero((z[:, :-1] < 0.5) & (z[:, 1:] >= 0.5), axis=1) == 1
        # step position from the area under the normalized profile; unlike
        # a midpoint crossing this is free of sub-pixel phase bias
        area = 0.125 * (z.sum(axis=1) - 0.5 * (z[:, 0] + z[:, -1]))
        t = offs[-1] - area
        edge_pts = base[ok] + t[ok, None] * nrm[None]
        if len(edge_pts) < 3:
            lines.append(None)
            continue
        e = edge_pts
        pt, dir_ = _fit_side(e)
        resid = np.abs((e - pt) @ np.array([-dir_[1], dir_[0]]))
        keep = resid < max(0.5, 3.0 * np.median(resid))
        if keep.sum() >= 3 and keep.sum() < len(e):
            pt, dir_ = _fit_side(e[keep])
        lines.append((pt, dir_))
    out = c.copy()
    for s in range(4):
        la, lb = lines[s - 1], lines[s]
        if la is None or lb is None:
            continue
        x = _intersect(la[0], la[1], lb[0], lb[1])
        if x is not None and np.hypot(*(x - c[s])) < 3.0:
            out[s] = x
    out[:, 0] = np.clip(out[:, 0], 0, w - 1)
    out[:, 1] = np.clip(out[:, 1], 0, h - 1)
    return out


def _dedupe(dets: list[MarkerDetection]) -> list[MarkerDetection]:
    out: list[MarkerDetection] = []
    for d in dets:
        centre = d.corners.mean(axis=0)
        if any(o.id == d.id and np.hypot(*(o.corners.mean(axis=0) - centre)) < 2.0 for o in out):
            continue
        out.append(d)
    return out


def render_marker(dictionary: Dictionary, marker_id: int, cell_px: int = 20,
                  margin_cells: int = 1, bright_ink: bool = False) -> Frame:
    """Axis-aligned binary image of a marker with a quiet zone around it."""
    bits = dictionary.marker_bits(marker_id)
    img = np.kron(bits, np.ones((cell_px, cell_px), dtype=np.uint8)) * 255
    pad = margin_cells * cell_px
    img = np.pad(img, pad, constant_values=255)
    if bright_ink:
        img = 255 - img
    return Frame(img.astype(np.uint8), FrameFormat.BIN1)
