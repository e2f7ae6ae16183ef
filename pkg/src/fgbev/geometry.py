"""Rigid transforms, pinhole cameras, oriented 3D boxes, and augmentation sampling.

Everything here is a pure function over immutable values. Coordinate
conventions:

* Ego frame: right-handed, meters. The simulator uses x forward, y left,
  z up, but nothing in this module depends on that choice.
* Camera frame: x right, y down, z along the optical axis. "Depth" always
  means the camera-frame z coordinate, not ray length.
* Pixels: u along image width, v along image height, origin at the
  top-left pixel center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHONORMAL_TOL = 1e-9

# Augmentation ranges (image scale/rotation, BEV rotation/scale).
IMAGE_SCALE_RANGE = (0.5, 1.25)
IMAGE_ROTATE_RANGE = (-math.radians(5.4), math.radians(5.4))
BEV_ROTATE_RANGE = (-math.radians(22.5), math.radians(22.5))
BEV_SCALE_RANGE = (0.95, 1.05)
FLIP_PROBABILITY = 0.5


def _as_vector(x, n, name):
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.shape != (n,):
        raise ValueError(f"{name} must be a {n}-vector, got shape {np.shape(x)}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def rotation_about_z(angle: float) -> np.ndarray:
    """3x3 rotation matrix about the +z axis."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """A proper rigid motion: p' = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {rot.shape}")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=ORTHONORMAL_TOL):
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise ValueError("rotation must have determinant +1 (no reflections)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", _as_vector(self.translation, 3, "translation"))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotation_about_z(yaw), np.asarray(translation, dtype=np.float64))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return the transform equivalent to applying `other` first, then self."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with rigid extrinsics mapping ego coordinates to camera coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    ego_to_cam: RigidTransform
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.image_width):
            raise ValueError(f"cx={self.cx} outside [0, {self.image_width})")
        if not (0 <= self.cy < self.image_height):
            raise ValueError(f"cy={self.cy} outside [0, {self.image_height})")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")

    @property
    def cam_to_ego(self) -> RigidTransform:
        return self.ego_to_cam.inverse()

    def feature_grid_shape(self, stride: int) -> tuple[int, int]:
        """(rows, cols) of the feature grid at `stride`; stride must divide the image."""
        if self.image_height % stride or self.image_width % stride:
            raise ValueError(
                f"feature_stride {stride} does not divide image "
                f"{self.image_width}x{self.image_height}"
            )
        return self.image_height // stride, self.image_width // stride


def project_point(cam: CameraModel, p_ego) -> tuple[float, float, float] | None:
    """Project an ego-frame point to (u, v, depth).

    Returns None when the point is behind the camera (depth <= 0) or lands
    outside the image bounds [0, W-1] x [0, H-1]. Absence is a value here,
    not an error.
    """
    p = _as_vector(p_ego, 3, "p_ego")
    pc = cam.ego_to_cam.apply(p)
    z = pc[2]
    if z <= 0.0:
        return None
    u = cam.fx * pc[0] / z + cam.cx
    v = cam.fy * pc[1] / z + cam.cy
    if not (0.0 <= u <= cam.image_width - 1 and 0.0 <= v <= cam.image_height - 1):
        return None
    return float(u), float(v), float(z)


def project_points_unbounded(cam: CameraModel, points: np.ndarray):
    """Vectorized pinhole projection without bounds filtering.

    Returns (uv, depth): uv is (N, 2) pixel coordinates, depth is (N,)
    camera-frame z. Entries with depth <= 0 get NaN pixel coordinates; the
    caller decides what to keep.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    pc = cam.ego_to_cam.apply(pts)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * pc[:, 0] / z + cam.cx
        v = cam.fy * pc[:, 1] / z + cam.cy
    bad = z <= 0.0
    u = np.where(bad, np.nan, u)
    v = np.where(bad, np.nan, v)
    return np.stack([u, v], axis=1), z


def back_project(cam: CameraModel, u: float, v: float, depth: float) -> np.ndarray:
    """Inverse of the pinhole map: pixel + depth back to an ego-frame point."""
    x = (u - cam.cx) / cam.fx * depth
    y = (v - cam.cy) / cam.fy * depth
    return cam.cam_to_ego.apply(np.array([x, y, depth]))


@dataclass(frozen=True)
class Box3D:
    """Yaw-oriented cuboid in ego coordinates.

    size is (length, width, height): length along the box x axis (heading),
    width along box y, height along box z. visibility follows the ordinal
    1..4 convention (4 = fully visible).
    """

    center: np.ndarray
    size: tuple[float, float, float]
    yaw: float
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    class_id: int = 0
    is_stationary: bool = False
    visibility: int = 4

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vector(self.center, 3, "center"))
        object.__setattr__(self, "velocity", _as_vector(self.velocity, 2, "velocity"))
        size = tuple(float(s) for s in self.size)
        if len(size) != 3 or any(s <= 0 for s in size):
            raise ValueError(f"size components must be positive, got {self.size}")
        object.__setattr__(self, "size", size)
        if self.visibility not in (1, 2, 3, 4):
            raise ValueError(f"visibility must be in {{1,2,3,4}}, got {self.visibility}")

    @property
    def half_size(self) -> np.ndarray:
        return np.asarray(self.size) / 2.0


# Corner ordering: bottom face counter-clockwise (seen from +z), then top
# face in the same order, starting at (+l/2, +w/2, -h/2) in the box frame.
_CORNER_SIGNS = np.array(
    [
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, +1],
        [-1, +1, +1],
        [-1, -1, +1],
        [+1, -1, +1],
    ],
    dtype=np.float64,
)


def box3d_corners(box: Box3D) -> np.ndarray:
    """The 8 corners of the box in ego coordinates, in the documented fixed order."""
    local = _CORNER_SIGNS * box.half_size
    return local @ rotation_about_z(box.yaw).T + box.center


def points_in_box(box: Box3D, points: np.ndarray) -> np.ndarray:
    """Closed-cuboid membership test for an (N, 3) batch; returns (N,) bools."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    local = (pts - box.center) @ rotation_about_z(box.yaw)
    return np.all(np.abs(local) <= box.half_size, axis=1)


def point_in_box(box: Box3D, p_ego) -> bool:
    """True iff the point lies inside the box; the boundary counts as inside."""
    return bool(points_in_box(box, _as_vector(p_ego, 3, "p_ego"))[0])


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned pixel rectangle with (x1, y1) top-left and (x2, y2) bottom-right."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"degenerate Box2D: ({self.x1},{self.y1})-({self.x2},{self.y2})")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1


def visible_corner_rect(cam: CameraModel, box: Box3D):
    """Unclipped bounding rectangle over corners with positive camera depth.

    Returns (x1, y1, x2, y2, min_depth) or None when every corner is behind
    the camera.
    """
    uv, depth = project_points_unbounded(cam, box3d_corners(box))
    front = depth > 0.0
    if not front.any():
        return None
    u, v = uv[front, 0], uv[front, 1]
    return u.min(), v.min(), u.max(), v.max(), float(depth[front].min())


def project_box3d_to_box2d(cam: CameraModel, box: Box3D) -> Box2D | None:
    """Axis-aligned rectangle of the projected visible corners, clipped to the image.

    Absent when no corner has positive depth or the rectangle misses the
    image entirely.
    """
    rect = visible_corner_rect(cam, box)
    if rect is None:
        return None
    x1, y1, x2, y2, _ = rect
    w, h = cam.image_width - 1, cam.image_height - 1
    if x2 < 0 or y2 < 0 or x1 > w or y1 > h:
        return None
    return Box2D(max(x1, 0.0), max(y1, 0.0), min(x2, float(w)), min(y2, float(h)))


@dataclass(frozen=True)
class PointCloud:
    """(N, 3) points tagged with the coordinate frame they are expressed in."""

    points: np.ndarray
    frame_tag: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got shape {pts.shape}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def require_tag(self, expected: str) -> None:
        """Boundary check used by operations that assume a specific frame."""
        if self.frame_tag != expected:
            raise ValueError(
                f"point cloud is in frame {self.frame_tag!r}, expected {expected!r}"
            )


@dataclass(frozen=True)
class AugmentationParams:
    """Geometric augmentation parameters for image-plane labels and BEV grids.

    The dedicated sampler keeps every field within the documented ranges;
    hand-built instances are not range-checked.
    """

    image_scale: float
    image_flip: bool
    image_rotate: float
    bev_rotate: float
    bev_scale: float
    bev_flip_x: bool
    bev_flip_y: bool

    def image_affine(self, width: int, height: int) -> np.ndarray:
        """3x3 homogeneous map for image-plane label coordinates.

        Order: scale about the origin, then horizontal flip about the image
        vertical centerline, then rotation about the image center.
        """
        s = np.diag([self.image_scale, self.image_scale, 1.0])
        f = np.eye(3)
        if self.image_flip:
            f[0, 0] = -1.0
            f[0, 2] = width - 1.0
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        c, sn = math.cos(self.image_rotate), math.sin(self.image_rotate)
        r = np.array(
            [
                [c, -sn, cx - c * cx + sn * cy],
                [sn, c, cy - sn * cx - c * cy],
                [0.0, 0.0, 1.0],
            ]
        )
        return r @ f @ s

    def bev_affine(self, grid_h: int, grid_w: int) -> np.ndarray:
        """3x3 homogeneous map for BEV cell coordinates (col, row).

        Order: rotation about the grid center, scale about the center, then
        the independent axis flips.
        """
        cx, cy = (grid_w - 1) / 2.0, (grid_h - 1) / 2.0

        def about_center(m2):
            m = np.eye(3)
            m[:2, :2] = m2
            m[:2, 2] = np.array([cx, cy]) - m2 @ np.array([cx, cy])
            return m

        c, s = math.cos(self.bev_rotate), math.sin(self.bev_rotate)
        rot = about_center(np.array([[c, -s], [s, c]]))
        scale = about_center(np.diag([self.bev_scale, self.bev_scale]))
        fx = about_center(np.diag([-1.0, 1.0])) if self.bev_flip_x else np.eye(3)
        fy = about_center(np.diag([1.0, -1.0])) if self.bev_flip_y else np.eye(3)
        return fy @ fx @ scale @ rot


def transform_box2d(matrix: np.ndarray, box: Box2D) -> Box2D:
    """Map a pixel rectangle through a 3x3 homogeneous affine and re-bound it.

    Used to draw label rasters at the augmented image geometry: transform
    the four corners, then take their axis-aligned bounds.
    """
    corners = np.array(
        [
            [box.x1, box.y1, 1.0],
            [box.x2, box.y1, 1.0],
            [box.x1, box.y2, 1.0],
            [box.x2, box.y2, 1.0],
        ]
    )
    moved = corners @ np.asarray(matrix, dtype=np.float64).T
    xs, ys = moved[:, 0], moved[:, 1]
    return Box2D(xs.min(), ys.min(), xs.max(), ys.max())


def sample_augmentation(rng_seed: int) -> AugmentationParams:
    """Deterministically sample augmentation parameters within the standard ranges."""
    rng = np.random.default_rng(rng_seed)
    return AugmentationParams(
        image_scale=float(rng.uniform(*IMAGE_SCALE_RANGE)),
        image_flip=bool(rng.random() < FLIP_PROBABILITY),
        image_rotate=float(rng.uniform(*IMAGE_ROTATE_RANGE)),
        bev_rotate=float(rng.uniform(*BEV_ROTATE_RANGE)),
        bev_scale=float(rng.uniform(*BEV_SCALE_RANGE)),
        bev_flip_x=bool(rng.random() < FLIP_PROBABILITY),
        bev_flip_y=bool(rng.random() < FLIP_PROBABILITY),
    )
