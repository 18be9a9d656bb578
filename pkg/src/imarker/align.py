"""Feature-based alignment between the two cameras of a dual-vision rig.

Corners come from a FAST-style segment test, descriptors are 256-bit
BRIEF-style intensity comparisons, and the inter-camera homography is fitted
with RANSAC around a Hartley-normalized DLT. Descriptors are not rotation
invariant: both cameras of the rig share their orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels
from .imgcore import Frame, FrameFormat, FrameFormatError, gaussian_blur

DESCRIPTOR_BITS = 256
PATCH_RADIUS = 15
BORDER = 16
RATIO = 0.8
SINGLE_MATCH_CAP = 64
MIN_INLIERS = 8


class DegenerateConfigurationError(ValueError):
    """Point configuration does not determine a homography."""


class CalibrationError(RuntimeError):
    """Alignment could not be estimated (too few consistent matches)."""


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    score: float


@dataclass(frozen=True, eq=False)
class Homography:
    m: np.ndarray
    inlier_count: int = 0
    inlier_rms: float = 0.0

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).reshape(3, 3)
        if m[2, 2] == 0 or not np.isfinite(m).all():
            raise DegenerateConfigurationError("homography cannot be normalized")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < 1e-12:
            raise DegenerateConfigurationError("singular homography")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m), self.inlier_count, self.inlier_rms)

    def apply(self, pts) -> np.ndarray:
        return apply_homography(self.m, pts)

    def save(self, path: str | Path) -> None:
        nums = " ".join(repr(float(v)) for v in self.m.ravel())
        text = (
            "# imarker homography v1 (row-major 3x3)\n"
            f"{nums}\n"
            f"inlier_count {self.inlier_count}\n"
            f"inlier_rms {self.inlier_rms!r}\n"
        )
        Path(path).write_text(text)

    @classmethod
    def load(cls, path: str | Path) -> "Homography":
        lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
        lines = [ln for ln in lines if ln and not ln.startswith("#")]
        if not lines:
            raise ValueError(f"{path}: empty calibration file")
        values = [float(v) for v in lines[0].split()]
        if len(values) != 9:
            raise ValueError(f"{path}: expected 9 matrix entries, got {len(values)}")
        extra = dict(ln.split(None, 1) for ln in lines[1:])
        return cls(
            np.array(values).reshape(3, 3),
            int(extra.get("inlier_count", 0)),
            float(extra.get("inlier_rms", 0.0)),
        )


def apply_homography(m, pts) -> np.ndarray:
    p = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    h = np.asarray(m, dtype=np.float64)
    den = p @ h[2, :2] + h[2, 2]
    x = (p @ h[0, :2] + h[0, 2]) / den
    y = (p @ h[1, :2] + h[1, 2]) / den
    return np.stack([x, y], axis=1)


# ------------------------------------------------------------------ corners

def detect_corners(f: Frame, max_n: int = 1000, t: int = 20) -> list[Keypoint]:
    """Segment-test corners (9 contiguous of 16) with 3x3 non-maximum suppression."""
    if f.format is not FrameFormat.GRAY8:
        raise FrameFormatError("corner detection needs a GRAY8 frame")
    if f.width < 7 or f.height < 7:
        raise FrameFormatError("frame must be at least 7x7")
    scores = _kernels.fast_scores(f.data, int(t)).astype(np.float64)
    if not scores.any():
        return []
    # Unique tie-breaker: earlier raster position wins among equal scores.
    order = np.arange(scores.size, dtype=np.float64).reshape(scores.shape)
    keyed = np.where(scores > 0, scores + 0.5 * (1.0 - order / scores.size), 0.0)
    peaks = (keyed > 0) & (keyed == ndimage.maximum_filter(keyed, size=3, mode="constant"))
    ys, xs = np.nonzero(peaks)
    rank = np.argsort(-keyed[ys, xs], kind="stable")[:max_n]
    return [Keypoint(float(xs[i]), float(ys[i]), float(scores[ys[i], xs[i]])) for i in rank]


def brief_pattern(seed: int = 0x1CE) -> np.ndarray:
    """Fixed (256, 4) array of (dx1, dy1, dx2, dy2) offsets inside a 31x31 patch."""
    rng = np.random.default_rng(seed)
    pat = np.clip(np.rint(rng.normal(0.0, 31 / 5.0, size=(DESCRIPTOR_BITS, 4))), -PATCH_RADIUS, PATCH_RADIUS)
    return pat.astype(np.int64)


def compute_descriptors(f: Frame, kps, seed: int = 0x1CE):
    """BRIEF-style descriptors packed into (n, 32) uint8.

    Keypoints closer than 16 px to the border are dropped. Returns the packed
    descriptors and the indices (into ``kps``) of the keypoints that survived.
    """
    img = f.data
    h, w = img.shape
    pat = brief_pattern(seed)
    kept = [i for i, k in enumerate(kps)
            if BORDER <= round(k.x) < w - BORDER and BORDER <= round(k.y) < h - BORDER]
    if not kept:
        return np.zeros((0, DESCRIPTOR_BITS // 8), dtype=np.uint8), kept
    xs = np.array([round(kps[i].x) for i in kept])[:, None]
    ys = np.array([round(kps[i].y) for i in kept])[:, None]
    a = img[ys + pat[:, 1], xs + pat[:, 0]]
    b = img[ys + pat[:, 3], xs + pat[:, 2]]
    return np.packbits(a < b, axis=1), kept


def hamming_matrix(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    a = np.unpackbits(d1, axis=1).astype(np.float32)
    b = np.unpackbits(d2, axis=1).astype(np.float32)
    return np.rint(a @ (1.0 - b).T + (1.0 - a) @ b.T).astype(np.int64)


def match_descriptors(d1: np.ndarray, d2: np.ndarray, ratio: float = RATIO):
    """Mutual nearest neighbours under Hamming distance with a ratio test.

    When ``d2`` has a single entry the ratio is undefined and a match is kept
    only if its distance is at most 64. Returns ``[(i, j, distance), ...]``.
    """
    if len(d1) == 0 or len(d2) == 0:
        raise ValueError("descriptor lists must be nonempty")
    dist = hamming_matrix(d1, d2)
    best_j = np.argmin(dist, axis=1)
    best_i = np.argmin(dist, axis=0)
    out = []
    for i, j in enumerate(best_j):
        if best_i[j] != i:
            continue
        d = int(dist[i, j])
        if dist.shape[1] == 1:
            if d <= SINGLE_MATCH_CAP:
                out.append((i, int(j), d))
            continue
        second = np.partition(dist[i], 1)[1]
        if d <= ratio * second:
            out.append((i, int(j), d))
    return out


# -------------------------------------------------------------- homography

def _normalizer(p: np.ndarray) -> np.ndarray:
    c = p.mean(axis=0)
    d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _has_collinear_triple(p: np.ndarray, tol: float = 1e-9) -> bool:
    n = len(p)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                u, v = p[j] - p[i], p[k] - p[i]
                if abs(u[0] * v[1] - u[1] * v[0]) <= tol * max(1.0, (u @ u) * (v @ v)) ** 0.5:
                    return True
    return False


def dlt_homography(src, dst) -> Homography:
    """Least-squares homography mapping ``src`` points onto ``dst`` points."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst) or len(src) < 4:
        raise DegenerateConfigurationError("need at least 4 correspondences")
    ts, td = _normalizer(src), _normalizer(dst)
    ps = src @ ts[:2, :2].T + ts[:2, 2]
    pd = dst @ td[:2, :2].T + td[:2, 2]
    if len(src) == 4 and (_has_collinear_triple(ps) or _has_collinear_triple(pd)):
        raise DegenerateConfigurationError("three of four points are collinear")
    n = len(ps)
    a = np.zeros((2 * n, 9))
    x, y = ps[:, 0], ps[:, 1]
    u, v = pd[:, 0], pd[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, s, vt = np.linalg.svd(a)
    if s.size >= 9 and s[-2] <= 1e-12 * s[0]:
        raise DegenerateConfigurationError("correspondences do not determine a unique homography")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(td) @ hn @ ts
    if abs(m[2, 2]) < 1e-15:
        raise DegenerateConfigurationError("homography maps the origin to infinity")
    return Homography(m / m[2, 2])


def _four_point_batch(ps: np.ndarray, pd: np.ndarray) -> np.ndarray:
    """Exact homographies (h33 = 1) for a batch of 4-point samples, shape (k, 4, 2)."""
    k = ps.shape[0]
    a = np.zeros((k, 8, 8))
    b = np.zeros((k, 8))
    x, y = ps[..., 0], ps[..., 1]
    u, v = pd[..., 0], pd[..., 1]
    a[:, 0::2, 0] = x
    a[:, 0::2, 1] = y
    a[:, 0::2, 2] = 1
    a[:, 0::2, 6] = -u * x
    a[:, 0::2, 7] = -u * y
    a[:, 1::2, 3] = x
    a[:, 1::2, 4] = y
    a[:, 1::2, 5] = 1
    a[:, 1::2, 6] = -v * x
    a[:, 1::2, 7] = -v * y
    b[:, 0::2] = u
    b[:, 1::2] = v
    det = np.linalg.det(a)
    ok = np.abs(det) > 1e-10
    hs = np.full((k, 9), np.nan)
    if ok.any():
        sol = np.linalg.solve(a[ok], b[ok][..., None])[..., 0]
        hs[ok, :8] = sol
        hs[ok, 8] = 1.0
    return hs.reshape(k, 3, 3)


def _reproj_errors(hs: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    p = np.concatenate([src, np.ones((len(src), 1))], axis=1)
    q = np.einsum("kij,nj->kni", hs, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = q[..., :2] / q[..., 2:3]
        err = np.sqrt(((proj - dst[None]) ** 2).sum(axis=2))
    return np.where(np.isfinite(err), err, np.inf)


def estimate_homography_ransac(src, dst, iters: int = 2000, inlier_tol: float = 2.0,
                               rng: np.random.Generator | int | None = 0,
                               min_inliers: int = MIN_INLIERS) -> Homography:
    """RANSAC over 4-point samples, refit on the best consensus set.

    Any 4 points fit some homography exactly, so a consensus of ``min_inliers``
    (more than the minimal sample) is demanded before the fit counts as a
    calibration.
    """
    min_inliers = max(4, int(min_inliers))
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise CalibrationError(f"need at least 4 matches, got {n}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    ts, td = _normalizer(src), _normalizer(dst)
    ps = src @ ts[:2, :2].T + ts[:2, 2]
    pd = dst @ td[:2, :2].T + td[:2, 2]
    samples = np.stack([rng.choice(n, size=4, replace=False) for _ in range(iters)])
    hn = _four_point_batch(ps[samples], pd[samples])
    hs = np.linalg.inv(td)[None] @ hn @ ts[None]
    best_mask = None
    best_count = 0
    chunk = max(1, 2_000_000 // max(n, 1))
    for start in range(0, iters, chunk):
        err = _reproj_errors(hs[start:start + chunk], src, dst)
        counts = (err < inlier_tol).sum(axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count = int(counts[k])
            best_mask = err[k] < inlier_tol
    if best_count < min_inliers:
        raise CalibrationError(f"only {best_count} inliers (need {min_inliers}); alignment failed")
    mask = best_mask
    model = None
    for _ in range(5):
        try:
            model = dlt_homography(src[mask], dst[mask])
        except DegenerateConfigurationError as exc:
            raise CalibrationError(f"degenerate inlier set: {exc}") from exc
        err = _reproj_errors(model.m[None], src, dst)[0]
        new_mask = err < inlier_tol
        if new_mask.sum() < 4:
            break
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    err = _reproj_errors(model.m[None], src, dst)[0]
    mask = err < inlier_tol
    if mask.sum() < min_inliers:
        raise CalibrationError("refit lost consensus")
    rms = float(np.sqrt(np.mean(err[mask] ** 2)))
    return Homography(model.m, int(mask.sum()), rms)


# ------------------------------------------------------------------- warping

def warp_perspective(f: Frame, h: Homography, out_size: tuple[int, int] | None = None,
                     return_valid: bool = False):
    """Warp ``f`` by ``h`` (source -> destination) with bilinear inverse mapping.

    ``out_size`` is (width, height); destination pixels whose source falls
    outside the input are 0. With ``return_valid`` a 0/255 coverage mask is
    returned as well.
    """
    w, hgt = out_size if out_size is not None else (f.width, f.height)
    hinv = np.linalg.inv(h.m)
    out, valid = _kernels.warp_bilinear(f.data, hinv, int(hgt), int(w))
    fmt = FrameFormat.GRAY8 if f.format is FrameFormat.BIN1 else f.format
    frame = Frame(out, fmt, f.timestamp)
    if return_valid:
        return frame, valid
    return frame


# ---------------------------------------------------------------- calibrate

def calibrate_alignment(reference: Frame, moving: Frame, *, max_corners: int = 1500,
                        fast_threshold: int = 20, iters: int = 2000, inlier_tol: float = 2.0,
                        subpixel: bool = True, photometric: bool = True,
                        seed: int = 0, min_inliers: int = MIN_INLIERS) -> Homography:
    """Homography taking ``moving`` pixel coordinates onto ``reference``.

    Both frames should show the same feature-rich calibration scene.
    """
    from .marker import refine_corners

    smooth_r = gaussian_blur(reference, 1.0)
    smooth_m = gaussian_blur(moving, 1.0)
    kr = detect_corners(smooth_r, max_corners, fast_threshold)
    km = detect_corners(smooth_m, max_corners, fast_threshold)
    if len(kr) < 4 or len(km) < 4:
        raise CalibrationError("too few corners in calibration frames")
    dr, ir = compute_descriptors(smooth_r, kr)
    dm, im = compute_descriptors(smooth_m, km)
    if len(dr) == 0 or len(dm) == 0:
        raise CalibrationError("no describable corners in calibration frames")
    matches = match_descriptors(dm, dr)
    if len(matches) < 4:
        raise CalibrationError(f"only {len(matches)} descriptor matches")
    pm = np.array([[km[im[i]].x, km[im[i]].y] for i, _, _ in matches])
    pr = np.array([[kr[ir[j]].x, kr[ir[j]].y] for _, j, _ in matches])
    if subpixel:
        rm, okm = refine_corners(moving, pm, return_status=True)
        rr, okr = refine_corners(reference, pr, return_status=True)
        ok = okm & okr
        if ok.sum() >= 4:
            pm, pr = rm[ok], rr[ok]
    h = estimate_homography_ransac(pm, pr, iters=iters, inlier_tol=inlier_tol, rng=seed,
                                   min_inliers=min_inliers)
    if photometric:
        m = refine_homography_photometric(reference, moving, h.m)
        if m is not None:
            h = Homography(m, h.inlier_count, h.inlier_rms)
    return h


def refine_homography_photometric(reference: Frame, moving: Frame, m0, *, iters: int = 15,
                                  sigma: float = 1.0, step: int = 2, tol: float = 1e-4):
    """Gauss-Newton on the intensity residual ref(H p) - mov(p).

    Starts from the feature-based estimate ``m0`` (moving -> reference) and
    returns the refined matrix, or None when the problem is ill-conditioned
    or the residual does not decrease.
    """
    ref = ndimage.gaussian_filter(_gray_f64(reference), sigma)
    mov = ndimage.gaussian_filter(_gray_f64(moving), sigma)
    hgt, w = ref.shape
    margin = int(math.ceil(3 * sigma)) + 2
    ys, xs = np.mgrid[margin:mov.shape[0] - margin:step, margin:mov.shape[1] - margin:step]
    xs = xs.ravel().astype(np.float64)
    ys = ys.ravel().astype(np.float64)
    target = mov[ys.astype(int), xs.astype(int)]
    coef = ndimage.spline_filter(ref, order=3)
    gy, gx = np.gradient(ref)
    m = np.asarray(m0, dtype=np.float64) / m0[2, 2]

    def residual(m):
        d = m[2, 0] * xs + m[2, 1] * ys + 1.0
        u = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / d
        v = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / d
        ok = (u >= margin) & (u <= w - 1 - margin) & (v >= margin) & (v <= hgt - 1 - margin)
        val = ndimage.map_coordinates(coef, [v, u], order=3, prefilter=False)
        return val - target, u, v, d, ok

    r, u, v, d, ok = residual(m)
    cost = float(np.mean(r[ok] ** 2)) if ok.any() else np.inf
    for _ in range(iters):
        if ok.sum() < 1000:
            return None
        xo, yo, uo, vo, do, ro = xs[ok], ys[ok], u[ok], v[ok], d[ok], r[ok]
        ix = ndimage.map_coordinates(gx, [vo, uo], order=1)
        iy = ndimage.map_coordinates(gy, [vo, uo], order=1)
        jac = np.stack([
            ix * xo, ix * yo, ix, iy * xo, iy * yo, iy,
            -(ix * uo + iy * vo) * xo, -(ix * uo + iy * vo) * yo,
        ], axis=1) / do[:, None]
        jtj = jac.T @ jac
        if np.linalg.cond(jtj) > 1e18:
            return None
        delta = -np.linalg.solve(jtj, jac.T @ ro)
        cand = m + np.append(delta, 0.0).reshape(3, 3)
        r2, u2, v2, d2, ok2 = residual(cand)
        cost2 = float(np.mean(r2[ok2] ** 2)) if ok2.any() else np.inf
        if not cost2 < cost:
            break
        shift = np.max(np.abs(apply_homography(cand, _CORNER_PROBE * [w, hgt])
                              - apply_homography(m, _CORNER_PROBE * [w, hgt])))
        m, r, u, v, d, ok, cost = cand, r2, u2, v2, d2, ok2, cost2
        if shift < tol:
            break
    return m


_CORNER_PROBE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def _gray_f64(f: Frame) -> np.ndarray:
    if f.format is FrameFormat.RGB8:
        return _kernels.rgb_to_gray(f.data).astype(np.float64)
    return f.data.astype(np.float64)
