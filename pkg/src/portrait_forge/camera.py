"""Rigid poses, pinhole projection and ray generation.

Camera frame convention: x right, y down, z forward (right-handed). Image
origin is the top-left corner; pixel ``(col, row)`` has its centre at
``(col + 0.5, row + 0.5)``. World space is y-up, so a frontal camera on the +z
axis uses the rotation ``diag(1, -1, -1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DataError

# EG3D-style defaults; configuration values, not measurements
DEFAULT_FOCAL_NORMALIZED = 4.2647
DEFAULT_RADIUS = 2.7
DEFAULT_NEAR = 2.25
DEFAULT_FAR = 3.3
RADIUS_RANGE = (2.4, 5.0)

FLIP_YZ = np.diag([1.0, -1.0, -1.0])


def _normalize_quat(q) -> tuple[float, float, float, float]:
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise DataError(f"quaternion must be 4 finite values, got {q}")
    n = np.linalg.norm(q)
    if n == 0:
        raise DataError("zero quaternion")
    q = q / n
    if q[0] < 0:
        q = -q
    return tuple(float(x) for x in q)


@dataclass(frozen=True)
class FacePose:
    """Rigid transform ``p' = R p + t``; stored as a unit quaternion (w, x, y, z)."""

    quaternion: tuple = (1.0, 0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "quaternion", _normalize_quat(self.quaternion))
        t = np.asarray(self.translation, dtype=np.float64).ravel()
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise DataError(f"translation must be 3 finite values, got {self.translation}")
        object.__setattr__(self, "translation", tuple(float(x) for x in t))

    @classmethod
    def identity(cls) -> "FacePose":
        return cls()

    @classmethod
    def from_matrix(cls, rotation, translation=(0.0, 0.0, 0.0), tol: float = 1e-6) -> "FacePose":
        r = np.asarray(rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise DataError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > tol or abs(np.linalg.det(r) - 1.0) > tol:
            raise DataError("rotation is not orthonormal with det +1")
        x, y, z, w = Rotation.from_matrix(r).as_quat()
        return cls((w, x, y, z), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "FacePose":
        x, y, z, w = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_quat()
        return cls((w, x, y, z), translation)

    @property
    def rotation(self) -> np.ndarray:
        w, x, y, z = self.quaternion
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def compose(self, inner: "FacePose") -> "FacePose":
        """``self ∘ inner``: apply ``inner`` first."""
        r = self.rotation @ inner.rotation
        t = self.rotation @ inner.t + self.t
        return FacePose.from_matrix(r, t)

    def inverse(self) -> "FacePose":
        w, x, y, z = self.quaternion
        return FacePose((w, -x, -y, -z), -(self.rotation.T @ self.t))

    def perturbed(self, delta_rot, delta_t) -> "FacePose":
        """Left-multiplied rotation increment ``exp([delta_rot]x) R`` and additive translation."""
        dx, dy, dz, dw = Rotation.from_rotvec(np.asarray(delta_rot, dtype=np.float64)).as_quat()
        w, x, y, z = self.quaternion
        q = (dw * w - dx * x - dy * y - dz * z,
             dw * x + dx * w + dy * z - dz * y,
             dw * y - dx * z + dy * w + dz * x,
             dw * z + dx * y - dy * x + dz * w)
        return FacePose(q, self.t + np.asarray(delta_t, dtype=np.float64))


def transform_points(pose: FacePose, points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return p @ pose.rotation.T + pose.t


@dataclass(frozen=True)
class Camera:
    pose: FacePose = field(default_factory=FacePose)      # world -> camera
    focal: float = 1.0
    principal_point: tuple = (0.5, 0.5)
    image_size: tuple = (1, 1)                            # (width, height)
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR
    radius: Optional[float] = None

    def __post_init__(self):
        problems = []
        if not (np.isfinite(self.focal) and self.focal > 0):
            problems.append(f"focal must be positive, got {self.focal}")
        if not (0 < self.near < self.far):
            problems.append(f"need 0 < near < far, got near={self.near}, far={self.far}")
        w, h = self.image_size
        if int(w) != w or int(h) != h or w <= 0 or h <= 0:
            problems.append(f"image_size must be positive integers, got {self.image_size}")
        if self.radius is not None and not (RADIUS_RANGE[0] <= self.radius <= RADIUS_RANGE[1]):
            problems.append(f"camera radius {self.radius} outside [{RADIUS_RANGE[0]}, {RADIUS_RANGE[1]}]")
        if problems:
            raise DataError("invalid Camera: " + "; ".join(problems))
        object.__setattr__(self, "image_size", (int(w), int(h)))
        object.__setattr__(self, "principal_point", tuple(float(c) for c in self.principal_point))
        object.__setattr__(self, "focal", float(self.focal))

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -(self.pose.rotation.T @ self.pose.t)

    def intrinsic_matrix(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array([[self.focal, 0.0, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])

    def resized(self, width: int, height: int) -> "Camera":
        """Same field of view at a different pixel resolution."""
        sx = width / self.width
        sy = height / self.height
        if not np.isclose(sx, sy):
            raise DataError("resizing must preserve the aspect ratio")
        cx, cy = self.principal_point
        return replace(self, focal=self.focal * sx, principal_point=(cx * sx, cy * sy),
                       image_size=(width, height))

    @classmethod
    def orbit(cls, resolution: int | tuple = 128, radius: float = DEFAULT_RADIUS, yaw: float = 0.0,
              pitch: float = 0.0, focal_normalized: float = DEFAULT_FOCAL_NORMALIZED,
              near: Optional[float] = None, far: Optional[float] = None) -> "Camera":
        """Camera on a sphere of ``radius`` around the origin, looking at it.

        ``yaw`` rotates about world +y and ``pitch`` about world +x (radians);
        yaw = pitch = 0 places the camera on the +z axis.
        """
        w, h = (resolution, resolution) if np.isscalar(resolution) else resolution
        orbit_rot = Rotation.from_euler("yx", [yaw, pitch]).as_matrix()
        center = orbit_rot @ np.array([0.0, 0.0, radius])
        r_wc = FLIP_YZ @ orbit_rot.T
        pose = FacePose.from_matrix(r_wc, -r_wc @ center)
        if near is None:
            near = radius - (DEFAULT_RADIUS - DEFAULT_NEAR)
        if far is None:
            far = radius + (DEFAULT_FAR - DEFAULT_RADIUS)
        return cls(pose=pose, focal=focal_normalized * w, principal_point=(w / 2.0, h / 2.0),
                   image_size=(w, h), near=near, far=far, radius=radius)


def canonical_camera(resolution: int | tuple = 256) -> Camera:
    """Fixed frontal camera used for every PNCC render."""
    return Camera.orbit(resolution, radius=DEFAULT_RADIUS)


def project_points(camera: Camera, points_world):
    """Pinhole projection.

    Returns ``(uv, depth, valid)``: ``uv`` is (M, 2) in pixels, ``depth`` the
    camera-frame z, and ``valid`` flags points with positive depth. Invalid
    points get NaN pixel coordinates.
    """
    pc = transform_points(camera.pose, points_world)
    z = pc[..., 2]
    valid = z > 0
    cx, cy = camera.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.focal * pc[..., 0] / z + cx
        v = camera.focal * pc[..., 1] / z + cy
    uv = np.stack([u, v], axis=-1)
    uv[~valid] = np.nan
    return uv, z, valid


@dataclass(frozen=True)
class Rays:
    origins: np.ndarray      # (H*W, 3)
    directions: np.ndarray   # (H*W, 3), unit norm
    t_near: float
    t_far: float
    width: int
    height: int

    def __len__(self):
        return self.origins.shape[0]


def generate_rays(camera: Camera, resolution=None) -> Rays:
    """One world-space ray per pixel centre, row-major order.

    When ``resolution`` differs from the camera's image size the intrinsics
    are rescaled to keep the field of view.
    """
    if resolution is not None:
        w, h = (resolution, resolution) if np.isscalar(resolution) else resolution
        if w <= 0 or h <= 0:
            raise DataError(f"resolution must be positive, got {resolution}")
        if (w, h) != camera.image_size:
            camera = camera.resized(w, h)
    w, h = camera.image_size
    cx, cy = camera.principal_point
    cols, rows = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    d_cam = np.stack([(cols - cx) / camera.focal, (rows - cy) / camera.focal, np.ones_like(cols)], -1)
    d_cam = d_cam.reshape(-1, 3)
    d_world = d_cam @ camera.pose.rotation      # R^T applied to row vectors
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.center, d_world.shape).copy()
    return Rays(origins, d_world, camera.near, camera.far, w, h)
