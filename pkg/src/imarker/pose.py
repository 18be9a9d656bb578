"""Pinhole camera with Brown-Conrady distortion and planar marker pose.

Conventions: camera frame x right, y down, z forward. Quaternions are
Hamilton, scalar first (w, x, y, z). A marker's object frame has x to the
right and y down when seen head-on, so the identity rotation faces the camera
with its top-left corner at (-s/2, -s/2, 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import DegenerateConfigurationError, dlt_homography

UNDISTORT_ITERS = 10
UNDISTORT_TOL = 1e-8


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def dist(self) -> tuple[float, float, float, float, float]:
        return (self.k1, self.k2, self.p1, self.p2, self.k3)

    @property
    def has_distortion(self) -> bool:
        return any(v != 0.0 for v in self.dist)

    def distort(self, xy: np.ndarray) -> np.ndarray:
        """Apply the distortion model to normalized image coordinates."""
        xy = np.asarray(xy, dtype=np.float64)
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
        xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x)
        yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y
        return np.stack([xd, yd], axis=-1)

    def to_pixels(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return np.stack([self.fx * xy[..., 0] + self.cx, self.fy * xy[..., 1] + self.cy], axis=-1)

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        p = np.asarray(points_cam, dtype=np.float64)
        xy = p[..., :2] / p[..., 2:3]
        return self.to_pixels(self.distort(xy))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(" ".join(repr(float(v)) for v in self.values()) + "\n")

    def values(self) -> tuple[float, ...]:
        return (self.fx, self.fy, self.cx, self.cy, *self.dist)

    @classmethod
    def load(cls, path: str | Path) -> "CameraIntrinsics":
        return cls.parse(Path(path).read_text())

    @classmethod
    def parse(cls, text: str) -> "CameraIntrinsics":
        toks = [t for ln in text.splitlines() if not ln.strip().startswith("#") for t in ln.split()]
        if len(toks) not in (4, 9):
            raise ValueError("intrinsics need 'fx fy cx cy [k1 k2 p1 p2 k3]'")
        return cls(*(float(t) for t in toks))


def undistort(points, K: CameraIntrinsics, with_residual: bool = False):
    """Normalized, undistorted coordinates of pixel ``points``.

    The distortion model is inverted with 10 fixed-point iterations. With
    ``with_residual`` the per-point forward-model error is returned too;
    values above 1e-8 mark points where the inversion did not converge.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    xd = np.stack([(pts[:, 0] - K.cx) / K.fx, (pts[:, 1] - K.cy) / K.fy], axis=1)
    if not K.has_distortion:
        return (xd, np.zeros(len(xd))) if with_residual else xd
    k1, k2, p1, p2, k3 = K.dist
    x = xd.copy()
    for _ in range(UNDISTORT_ITERS):
        u, v = x[:, 0], x[:, 1]
        r2 = u * u + v * v
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * u * v + p2 * (r2 + 2.0 * u * u)
        dy = p1 * (r2 + 2.0 * v * v) + 2.0 * p2 * u * v
        x = np.stack([(xd[:, 0] - dx) / radial, (xd[:, 1] - dy) / radial], axis=1)
    residual = np.hypot(*(K.distort(x) - xd).T)
    if with_residual:
        return x, residual
    return x


# --------------------------------------------------------------- rotations

def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def axis_angle_to_matrix(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    if theta < 1e-15:
        return np.eye(3) + skew(v)
    k = v / theta
    kx = skew(k)
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * (kx @ kx)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


# -------------------------------------------------------------------- types

@dataclass(frozen=True, eq=False)
class Pose6DoF:
    """Rigid marker-to-camera transform: rotation (w, x, y, z), translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        q = q / np.linalg.norm(q)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_matrix(cls, r: np.ndarray, t) -> "Pose6DoF":
        return cls(matrix_to_quat(r), t)

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def transform(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.matrix.T + self.translation

    def to_dict(self) -> dict:
        return {"t": [float(v) for v in self.translation], "q": [float(v) for v in self.rotation]}


@dataclass(frozen=True)
class MarkerGeometry:
    side_length: float

    def __post_init__(self):
        if not self.side_length > 0:
            raise ValueError("side_length must be positive")

    @property
    def object_points(self) -> np.ndarray:
        h = self.side_length / 2.0
        return np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])


@dataclass
class PoseFit:
    pose: Pose6DoF
    rms: float
    converged: bool
    iterations: int
    costs: list[float] = field(default_factory=list)


# --------------------------------------------------------------- estimation

def pose_from_homography(K: CameraIntrinsics, H) -> tuple[Pose6DoF, Pose6DoF]:
    """Both planar-ambiguity pose candidates from an object-plane homography.

    ``H`` maps marker-plane (X, Y) in meters to undistorted pixels.
    """
    h = np.asarray(getattr(H, "m", H), dtype=np.float64)
    if abs(np.linalg.det(h)) < 1e-15:
        raise DegenerateConfigurationError("singular homography")
    a = np.linalg.inv(K.matrix) @ h
    n1, n2 = np.linalg.norm(a[:, 0]), np.linalg.norm(a[:, 1])
    if n1 < 1e-15 or n2 < 1e-15:
        raise DegenerateConfigurationError("homography has a null column")
    lam = 2.0 / (n1 + n2)
    if a[2, 2] < 0:
        lam = -lam
    r1, r2, t = lam * a[:, 0], lam * a[:, 1], lam * a[:, 2]
    if np.cross(r1, r2) @ t <= 0:
        raise DegenerateConfigurationError("mirrored configuration: marker seen from behind")
    r = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    v = t / np.linalg.norm(t)
    flip_view = axis_angle_to_matrix(math.pi * v)
    flip_plane = np.diag([-1.0, -1.0, 1.0])
    r_alt = flip_view @ r @ flip_plane
    return Pose6DoF.from_matrix(r, t), Pose6DoF.from_matrix(r_alt, t)


def _project_with_jacobian(K: CameraIntrinsics, r: np.ndarray, t: np.ndarray, obj: np.ndarray,
                           need_jac: bool = True):
    pc = obj @ r.T + t
    X, Y, Z = pc[:, 0], pc[:, 1], pc[:, 2]
    x, y = X / Z, Y / Z
    k1, k2, p1, p2, k3 = K.dist
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    uv = np.stack([K.fx * xd + K.cx, K.fy * yd + K.cy], axis=1)
    if not need_jac:
        return uv, None
    dr = 2 * k1 + 4 * k2 * r2 + 6 * k3 * r2 * r2
    dxd_dx = radial + dr * x * x + 2 * p1 * y + 6 * p2 * x
    dxd_dy = dr * x * y + 2 * p1 * x + 2 * p2 * y
    dyd_dx = dr * x * y + 2 * p1 * x + 2 * p2 * y
    dyd_dy = radial + dr * y * y + 6 * p1 * y + 2 * p2 * x
    n = len(obj)
    zi = 1.0 / Z
    # d(pixel)/d(camera point), one 2x3 block per point
    dp = np.empty((n, 2, 3))
    dp[:, 0, 0] = K.fx * dxd_dx * zi
    dp[:, 0, 1] = K.fx * dxd_dy * zi
    dp[:, 0, 2] = -K.fx * (dxd_dx * x + dxd_dy * y) * zi
    dp[:, 1, 0] = K.fy * dyd_dx * zi
    dp[:, 1, 1] = K.fy * dyd_dy * zi
    dp[:, 1, 2] = -K.fy * (dyd_dx * x + dyd_dy * y) * zi
    rx = obj @ r.T  # rotated object points
    # d(R p)/d(omega) = -[R p]x
    sk = np.zeros((n, 3, 3))
    sk[:, 0, 1], sk[:, 0, 2] = rx[:, 2], -rx[:, 1]
    sk[:, 1, 0], sk[:, 1, 2] = -rx[:, 2], rx[:, 0]
    sk[:, 2, 0], sk[:, 2, 1] = rx[:, 1], -rx[:, 0]
    jac = np.concatenate([dp @ sk, dp], axis=2).reshape(2 * n, 6)
    return uv, jac


def reprojection_residuals(K, geometry: MarkerGeometry, corners, pose: Pose6DoF) -> np.ndarray:
    uv, _ = _project_with_jacobian(K, pose.matrix, pose.translation, geometry.object_points, False)
    return (uv - np.asarray(corners, dtype=np.float64).reshape(-1, 2)).ravel()


def reprojection_jacobian(K, geometry: MarkerGeometry, pose: Pose6DoF) -> np.ndarray:
    """d(residual)/d(omega, dt) for the update R <- exp(omega) R, t <- t + dt."""
    _, jac = _project_with_jacobian(K, pose.matrix, pose.translation, geometry.object_points)
    return jac


def apply_update(pose: Pose6DoF, delta) -> Pose6DoF:
    delta = np.asarray(delta, dtype=np.float64)
    r = axis_angle_to_matrix(delta[:3]) @ pose.matrix
    return Pose6DoF.from_matrix(r, pose.translation + delta[3:])


def refine_pose(K: CameraIntrinsics, geometry: MarkerGeometry, corners, pose0: Pose6DoF,
                max_iter: int = 20, return_info: bool = False):
    """Gauss-Newton minimization of the squared reprojection error.

    Steps that would increase the cost are not taken, so the result is never
    worse than ``pose0``.
    """
    obs = np.asarray(corners, dtype=np.float64).reshape(-1, 2)
    obj = geometry.object_points
    r, t = pose0.matrix, pose0.translation.copy()
    uv, jac = _project_with_jacobian(K, r, t, obj)
    res = (uv - obs).ravel()
    cost = float(res @ res)
    costs = [cost]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            delta = -np.linalg.solve(jac.T @ jac, jac.T @ res)
        except np.linalg.LinAlgError:
            try:
                delta = -np.linalg.lstsq(jac, res, rcond=None)[0]
            except np.linalg.LinAlgError:
                break
        r_new = axis_angle_to_matrix(delta[:3]) @ r
        t_new = t + delta[3:]
        if t_new[2] <= 0:
            break
        uv_new, jac_new = _project_with_jacobian(K, r_new, t_new, obj)
        res_new = (uv_new - obs).ravel()
        cost_new = float(res_new @ res_new)
        if cost_new > cost:
            converged = float(np.linalg.norm(delta)) < 1e-8
            break
        improvement = cost - cost_new
        r, t, res, jac, cost = nearest_rotation(r_new), t_new, res_new, jac_new, cost_new
        costs.append(cost)
        if np.linalg.norm(delta) < 1e-10 or improvement <= 1e-10 * cost + 1e-14:
            converged = True
            break
    pose = Pose6DoF.from_matrix(r, t)
    if not return_info:
        return pose
    return PoseFit(pose, math.sqrt(cost / len(obs)), converged, it, costs)


def _tilt(pose: Pose6DoF) -> float:
    normal = pose.matrix[:, 2]
    view = pose.translation / np.linalg.norm(pose.translation)
    return math.acos(float(np.clip(normal @ view, -1.0, 1.0)))


def estimate_pose(K: CameraIntrinsics, geometry: MarkerGeometry, detection, return_info: bool = False):
    """6DoF pose of a decoded marker from its four corners.

    ``detection`` is a MarkerDetection (its ``ordered_corners`` are used) or a
    (4, 2) array already in the marker's TL, TR, BR, BL order.
    """
    corners = getattr(detection, "ordered_corners", detection)
    corners = np.asarray(corners, dtype=np.float64).reshape(4, 2)
    norm = undistort(corners, K)
    und_px = K.to_pixels(norm)
    H = dlt_homography(geometry.object_points[:, :2], und_px)
    fits = []
    for cand in pose_from_homography(K, H):
        fit = refine_pose(K, geometry, corners, cand, return_info=True)
        fits.append(fit)
    fits.sort(key=lambda f: f.rms)
    best = fits[0]
    if len(fits) > 1 and abs(fits[1].rms ** 2 - best.rms ** 2) * 4 < 1e-12:
        best = min(fits, key=lambda f: _tilt(f.pose))
    return best if return_info else best.pose


def pose_error(est: Pose6DoF, gt: Pose6DoF) -> tuple[float, float]:
    """(translation distance in meters, rotation angle in degrees)."""
    dt = float(np.linalg.norm(est.translation - gt.translation))
    dot = abs(float(est.rotation @ gt.rotation))
    angle = 2.0 * math.degrees(math.acos(min(1.0, dot)))
    return dt, angle
