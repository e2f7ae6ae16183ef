"""Deterministic synthetic multi-frame scenes.

Stands in for a real driving dataset at desk scale: ground-truth boxes with
world-frame kinematics, a smooth ego trajectory, surface-sampled LiDAR
returns with ground clutter, synthetic multi-scale feature maps, and
simulated soft labels. Everything is a pure function of (config, seed).

Ego frame convention: x forward, y left, z up, origin on the ground under
the sensor mast.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Box3D,
    CameraModel,
    PointCloud,
    RigidTransform,
    box3d_corners,
    points_in_box,
    project_box3d_to_box2d,
    project_point,
    rotation_about_z,
)
from .labels import (
    DepthBinConfig,
    DepthDistributionMap,
    SegmentationMap,
    generate_hard_labels,
)
from .msfe import FeaturePyramid

SCENE_FORMAT = "fgbev-scene-v1"

EGO_SPEED = 6.0  # m/s along world x
EGO_YAW_RATE = 0.03  # rad/s, keeps relative poses non-trivial
CAMERA_HEIGHT = 1.6
CAMERA_FORWARD_OFFSET = 0.5
EGO_CLEARANCE = 4.0  # no box center within this xy distance of any ego position
MAX_PLACEMENT_ATTEMPTS = 1000

BACKGROUND_SEG_FLOOR = 0.05
SURFACE_INSET = 1e-6  # keeps sampled surface points strictly inside the closed box


@dataclass(frozen=True)
class SceneConfig:
    """Knobs for the synthetic scene generator."""

    n_frames: int = 2
    n_boxes: int = 12
    n_cameras: int = 1
    frame_interval: float = 0.5
    lidar_rays_per_box: int = 32
    stationary_fraction: float = 0.5
    detection_range_xy: float = 51.2
    detection_range_z: tuple[float, float] = (-5.0, 3.0)
    dropout_fraction: float = 0.0
    clutter_points: int = 128
    image_width: int = 704
    image_height: int = 256

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError(f"n_frames must be >= 2, got {self.n_frames}")
        if self.n_boxes < 0 or self.n_cameras < 1:
            raise ValueError("n_boxes must be >= 0 and n_cameras >= 1")
        if self.frame_interval <= 0:
            raise ValueError(f"frame_interval must be positive, got {self.frame_interval}")
        if self.detection_range_xy <= 0:
            raise ValueError("detection_range_xy must be positive")
        for name in ("stationary_fraction", "dropout_fraction"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.lidar_rays_per_box < 0 or self.clutter_points < 0:
            raise ValueError("point counts must be nonnegative")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(
            self,
            "detection_range_z",
            (float(self.detection_range_z[0]), float(self.detection_range_z[1])),
        )


@dataclass(frozen=True)
class Frame:
    """One timestamp: ego pose plus boxes, LiDAR, and cameras in ego coordinates."""

    timestamp: float
    ego_pose: RigidTransform  # ego -> world
    boxes: list[Box3D]
    lidar: PointCloud
    cameras: list[CameraModel]

    @property
    def tag(self) -> str:
        return self.lidar.frame_tag


@dataclass(frozen=True)
class Scene:
    frames: list[Frame]
    seed: int

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a scene needs at least 2 frames (one past frame)")
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"timestamps must strictly increase, got {ts}")

    @property
    def current(self) -> Frame:
        """The newest frame; earlier frames are the temporal context."""
        return self.frames[-1]

    @property
    def past(self) -> list[Frame]:
        return self.frames[:-1]


def _ego_pose(t: float) -> RigidTransform:
    return RigidTransform.from_yaw(EGO_YAW_RATE * t, (EGO_SPEED * t, 0.0, 0.0))


def _build_cameras(cfg: SceneConfig) -> list[CameraModel]:
    cams = []
    for k in range(cfg.n_cameras):
        a = 2.0 * math.pi * k / cfg.n_cameras
        c, s = math.cos(a), math.sin(a)
        # Camera axes in ego coordinates: z along the view direction,
        # y pointing down, x completing the right-handed frame.
        cam_to_ego_rot = np.array(
            [
                [s, 0.0, c],
                [-c, 0.0, s],
                [0.0, -1.0, 0.0],
            ]
        )
        position = np.array([CAMERA_FORWARD_OFFSET * c, CAMERA_FORWARD_OFFSET * s, CAMERA_HEIGHT])
        ego_to_cam = RigidTransform(cam_to_ego_rot, position).inverse()
        cams.append(
            CameraModel(
                fx=cfg.image_width * 0.5,
                fy=cfg.image_width * 0.5,
                cx=(cfg.image_width - 1) / 2.0,
                cy=(cfg.image_height - 1) / 2.0,
                ego_to_cam=ego_to_cam,
                image_width=cfg.image_width,
                image_height=cfg.image_height,
            )
        )
    return cams


def _assign_visibility(corners_ego: np.ndarray, cameras: list[CameraModel]) -> int:
    best = 0
    for cam in cameras:
        visible = sum(project_point(cam, c) is not None for c in corners_ego)
        best = max(best, visible)
    if best == 8:
        return 4
    if best >= 4:
        return 3
    if best >= 1:
        return 2
    return 1


def _facing_side_faces(sensor_box_frame: np.ndarray, half) -> list[tuple[int, float]]:
    """(axis, sign) of the side faces whose outward normal points at the sensor."""
    faces = []
    for axis in (0, 1):
        for sign in (1.0, -1.0):
            # Outward normal is sign * e_axis; the face center sits at
            # sign * half[axis] along that axis.
            if sign * sensor_box_frame[axis] > half[axis]:
                faces.append((axis, sign))
    return faces


def _sample_surface_points(rng, box: Box3D, n: int) -> np.ndarray:
    """n LiDAR returns on the sensor-facing faces of a box, in ego coordinates."""
    if n == 0:
        return np.zeros((0, 3))
    half = box.half_size
    rot = rotation_about_z(box.yaw)
    sensor_bf = rot.T @ (-box.center)  # ego origin expressed in the box frame
    faces = _facing_side_faces(sensor_bf, half)
    if not faces:
        return np.zeros((0, 3))
    areas = np.array(
        [2 * half[1 - axis] * 2 * half[2] for axis, _ in faces]
    )
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = np.empty((n, 3))
    for i, face_idx in enumerate(choice):
        axis, sign = faces[face_idx]
        other = 1 - axis
        p = np.empty(3)
        p[axis] = sign * (half[axis] - SURFACE_INSET)
        p[other] = rng.uniform(-(half[other] - SURFACE_INSET), half[other] - SURFACE_INSET)
        p[2] = rng.uniform(-(half[2] - SURFACE_INSET), half[2] - SURFACE_INSET)
        pts[i] = p
    return pts @ rot.T + box.center


def _sample_clutter(rng, cfg: SceneConfig, boxes: list[Box3D]) -> np.ndarray:
    """Uniform ground clutter, rejection-sampled to stay outside every box."""
    if cfg.clutter_points == 0:
        return np.zeros((0, 3))
    extent = max(cfg.detection_range_xy - 1.0, 1.0)
    out = []
    needed = cfg.clutter_points
    for _ in range(100):
        batch = np.column_stack(
            [
                rng.uniform(-extent, extent, needed),
                rng.uniform(-extent, extent, needed),
                rng.uniform(0.05, 0.5, needed),
            ]
        )
        inside = np.zeros(needed, dtype=bool)
        for box in boxes:
            inside |= points_in_box(box, batch)
        kept = batch[~inside]
        out.append(kept)
        needed -= len(kept)
        if needed == 0:
            return np.concatenate(out)
    raise ValueError("could not sample clutter outside boxes; region too crowded")


def generate_scene(cfg: SceneConfig, seed: int) -> Scene:
    """Build a deterministic scene: boxes, ego trajectory, LiDAR, cameras.

    Boxes are placed uniformly (without footprint overlap) in the current
    frame's detection region; stationary boxes keep their world position
    while dynamic ones advance by velocity * frame_interval. LiDAR returns
    are sampled on sensor-facing box faces plus ground clutter, and a
    dropout_fraction of boxes receives zero returns in the current frame so
    downstream densification has something to do.
    """
    rng = np.random.default_rng(seed)
    cameras = _build_cameras(cfg)
    times = [i * cfg.frame_interval for i in range(cfg.n_frames)]
    poses = [_ego_pose(t) for t in times]
    t_cur = times[-1]
    pose_cur = poses[-1]
    ego_xy = np.array([p.translation[:2] for p in poses])

    # Placement happens in the current frame; world positions follow.
    placed: list[dict] = []
    footprints: list[tuple[np.ndarray, float]] = []
    extent = cfg.detection_range_xy * 0.95
    for _ in range(cfg.n_boxes):
        if rng.random() < 0.25:
            size = (rng.uniform(0.4, 0.8), rng.uniform(0.4, 0.8), rng.uniform(0.6, 1.1))
            class_id = 1
        else:
            size = (rng.uniform(3.6, 5.0), rng.uniform(1.6, 2.1), rng.uniform(1.4, 1.9))
            class_id = 0
        radius = math.hypot(size[0], size[1]) / 2.0
        yaw_w = rng.uniform(-math.pi, math.pi)
        stationary = rng.random() < cfg.stationary_fraction
        if stationary:
            vel_w = np.zeros(2)
        else:
            speed = rng.uniform(1.0, 8.0)
            heading = rng.uniform(0.0, 2.0 * math.pi)
            vel_w = speed * np.array([math.cos(heading), math.sin(heading)])

        for attempt in range(MAX_PLACEMENT_ATTEMPTS + 1):
            if attempt == MAX_PLACEMENT_ATTEMPTS:
                raise ValueError(
                    f"could not place box {len(placed)} without overlap after "
                    f"{MAX_PLACEMENT_ATTEMPTS} attempts; reduce n_boxes or widen the region"
                )
            xy_ego = rng.uniform(-extent, extent, 2)
            center_w = pose_cur.apply(np.array([xy_ego[0], xy_ego[1], size[2] / 2.0]))
            if np.any(np.linalg.norm(ego_xy - center_w[:2], axis=1) < radius + EGO_CLEARANCE):
                continue
            clash = any(
                np.linalg.norm(c[:2] - center_w[:2]) < r + radius + 0.3
                for c, r in footprints
            )
            if not clash:
                break
        footprints.append((center_w, radius))
        placed.append(
            dict(
                center_w=center_w,
                size=size,
                yaw_w=yaw_w,
                vel_w=vel_w,
                stationary=stationary,
                class_id=class_id,
            )
        )

    dropped_current = rng.random(cfg.n_boxes) < cfg.dropout_fraction

    def boxes_at(t: float, pose: RigidTransform, visibilities=None) -> list[Box3D]:
        inv = pose.inverse()
        ego_yaw = EGO_YAW_RATE * t
        rot2 = rotation_about_z(-ego_yaw)[:2, :2]
        out = []
        for i, blueprint in enumerate(placed):
            center_w = blueprint["center_w"].copy()
            center_w[:2] += blueprint["vel_w"] * (t - t_cur)
            out.append(
                Box3D(
                    center=inv.apply(center_w),
                    size=blueprint["size"],
                    yaw=blueprint["yaw_w"] - ego_yaw,
                    velocity=rot2 @ blueprint["vel_w"],
                    class_id=blueprint["class_id"],
                    is_stationary=blueprint["stationary"],
                    visibility=4 if visibilities is None else visibilities[i],
                )
            )
        return out

    # Visibility is judged in the current frame, where downstream gating uses it.
    current_boxes_prelim = boxes_at(t_cur, pose_cur)
    visibilities = [
        _assign_visibility(box3d_corners(box), cameras) for box in current_boxes_prelim
    ]

    frames = []
    for idx, (t, pose) in enumerate(zip(times, poses)):
        boxes = boxes_at(t, pose, visibilities)
        is_current = idx == cfg.n_frames - 1
        surf = []
        for i, box in enumerate(boxes):
            if is_current and dropped_current[i]:
                continue
            surf.append(_sample_surface_points(rng, box, cfg.lidar_rays_per_box))
        clutter = _sample_clutter(rng, cfg, boxes)
        pts = np.concatenate([p for p in surf if len(p)] + [clutter]) if surf or len(clutter) else np.zeros((0, 3))
        frames.append(
            Frame(
                timestamp=t,
                ego_pose=pose,
                boxes=boxes,
                lidar=PointCloud(pts, f"frame-{idx}"),
                cameras=cameras,
            )
        )
    return Scene(frames, seed)


# --------------------------------------------------------------------------
# Synthetic feature pyramids
# --------------------------------------------------------------------------


def background_feature_level(
    width: int, height: int, stride: int, channels: int
) -> np.ndarray:
    """The seed-free smooth background, sampled at one stride's cell centers."""
    h_f, w_f = height // stride, width // stride
    rr, cc = np.mgrid[0:h_f, 0:w_f].astype(np.float64)
    u = (cc + 0.5) * stride
    v = (rr + 0.5) * stride
    out = np.empty((h_f, w_f, channels))
    for k in range(channels):
        out[:, :, k] = 0.5 * np.sin(
            2.0 * math.pi * u / width * (1.0 + 0.37 * k) + 0.8 * k
        ) * np.cos(2.0 * math.pi * v / height * (0.5 + 0.23 * k) - 0.3 * k)
    return out


def synth_feature_pyramid(
    frame: Frame, cam_index: int, channels: int, seed: int
) -> FeaturePyramid:
    """Deterministic stand-in for learned multi-scale image features.

    Each level is a smooth function of pixel position; cells whose centers
    fall inside a projected 2D box get a seeded per-box magnitude boost so
    foreground regions are distinguishable from background.
    """
    cam = frame.cameras[cam_index]
    if cam.image_width % 16 or cam.image_height % 16:
        raise ValueError(
            f"image {cam.image_width}x{cam.image_height} not divisible by 16"
        )
    rng = np.random.default_rng(seed)
    boosts = rng.uniform(1.0, 2.0, size=len(frame.boxes))
    rects = [project_box3d_to_box2d(cam, box) for box in frame.boxes]

    levels = []
    for stride in (4, 8, 16):
        level = background_feature_level(cam.image_width, cam.image_height, stride, channels)
        h_f, w_f = level.shape[:2]
        rr, cc = np.mgrid[0:h_f, 0:w_f].astype(np.float64)
        u = (cc + 0.5) * stride
        v = (rr + 0.5) * stride
        chan_gain = 1.0 + 0.1 * np.sin(np.arange(channels))
        for amp, rect in zip(boosts, rects):
            if rect is None:
                continue
            inside = (u >= rect.x1) & (u <= rect.x2) & (v >= rect.y1) & (v <= rect.y2)
            level[inside] += amp * chan_gain
        levels.append(level)
    return FeaturePyramid(*levels)


# --------------------------------------------------------------------------
# Simulated soft labels
# --------------------------------------------------------------------------


def _ray_box_entry_depths(
    cam: CameraModel, boxes: list[Box3D], h_f: int, w_f: int, stride: int
) -> np.ndarray:
    """Camera-frame depth where each feature cell's center ray enters the
    nearest box; +inf where no box is hit."""
    rr, cc = np.mgrid[0:h_f, 0:w_f]
    u = (cc.ravel() + 0.5) * stride
    v = (rr.ravel() + 0.5) * stride
    dirs_cam = np.stack(
        [(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u, dtype=np.float64)],
        axis=1,
    )
    c2e = cam.cam_to_ego
    origin = c2e.translation
    dirs = dirs_cam @ c2e.rotation.T  # ego-frame direction per unit depth

    best = np.full(u.shape, np.inf)
    for box in boxes:
        rot = rotation_about_z(box.yaw)
        o_b = rot.T @ (origin - box.center)
        d_b = dirs @ rot
        half = box.half_size
        d_safe = np.where(d_b == 0.0, 1e-300, d_b)
        t1 = (-half - o_b) / d_safe
        t2 = (half - o_b) / d_safe
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        hit = (tmax >= np.maximum(tmin, 0.0)) & (tmin > 0.0)
        best = np.where(hit & (tmin < best), tmin, best)
    return best.reshape(h_f, w_f)


def soft_labels_from_frame(
    frame: Frame,
    cam_index: int,
    depth_cfg: DepthBinConfig,
    noise: float,
    seed: int,
    feature_stride: int = 16,
) -> tuple[DepthDistributionMap, SegmentationMap]:
    """Simulate the predictions a well-trained depth/segmentation head would make.

    With noise=0 every cell peaks at its true depth: cells covered by this
    frame's LiDAR reuse the measured (hard-label) bin, uncovered foreground
    cells fall back to exact ray casting against the boxes, and everything
    else gets a uniform depth row with the background segmentation floor.
    Noise blends in a seeded random distribution and jitters segmentation.
    """
    if noise < 0:
        raise ValueError(f"noise must be nonnegative, got {noise}")
    cam = frame.cameras[cam_index]
    h_f, w_f = cam.feature_grid_shape(feature_stride)
    n_bins = depth_cfg.n_bins

    hard = generate_hard_labels(frame.lidar, frame.boxes, cam, depth_cfg, feature_stride)
    entry = _ray_box_entry_depths(cam, frame.boxes, h_f, w_f, feature_stride)
    ray_bins, ray_ok = depth_cfg.bin_indices(np.where(np.isfinite(entry), entry, 0.0))
    ray_ok &= np.isfinite(entry)

    depth = np.full((h_f, w_f, n_bins), 1.0 / n_bins)
    seg = np.full((h_f, w_f), BACKGROUND_SEG_FLOOR)

    measured = hard.valid_mask
    depth[measured] = hard.depth.values[measured]
    seg[measured & (hard.seg.values == 1.0)] = 1.0

    ray_fg = ~measured & ray_ok
    if ray_fg.any():
        rows, cols = np.nonzero(ray_fg)
        depth[ray_fg] = 0.0
        depth[rows, cols, ray_bins[ray_fg]] = 1.0
        seg[ray_fg] = 1.0

    if noise > 0:
        rng = np.random.default_rng(seed)
        raw = rng.uniform(0.0, 1.0, size=depth.shape)
        raw /= raw.sum(axis=2, keepdims=True)
        depth = (1.0 - noise) * depth + noise * raw
        seg = np.clip(seg + noise * rng.uniform(-0.3, 0.3, size=seg.shape), 0.0, 1.0)

    return DepthDistributionMap(depth, depth_cfg), SegmentationMap(seg)


# --------------------------------------------------------------------------
# Scene serialization (documented JSON layout)
# --------------------------------------------------------------------------


def _transform_to_dict(t: RigidTransform) -> dict:
    return {
        "rotation": [list(row) for row in t.rotation],
        "translation": list(t.translation),
    }


def _transform_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(np.asarray(d["rotation"]), np.asarray(d["translation"]))


def scene_to_dict(scene: Scene) -> dict:
    frames = []
    for f in scene.frames:
        frames.append(
            {
                "timestamp": f.timestamp,
                "ego_pose": _transform_to_dict(f.ego_pose),
                "boxes": [
                    {
                        "center": list(b.center),
                        "size": list(b.size),
                        "yaw": b.yaw,
                        "velocity": list(b.velocity),
                        "class_id": b.class_id,
                        "is_stationary": b.is_stationary,
                        "visibility": b.visibility,
                    }
                    for b in f.boxes
                ],
                "lidar": {
                    "frame_tag": f.lidar.frame_tag,
                    "points": [list(p) for p in f.lidar.points],
                },
                "cameras": [
                    {
                        "fx": c.fx,
                        "fy": c.fy,
                        "cx": c.cx,
                        "cy": c.cy,
                        "image_width": c.image_width,
                        "image_height": c.image_height,
                        "ego_to_cam": _transform_to_dict(c.ego_to_cam),
                    }
                    for c in f.cameras
                ],
            }
        )
    return {"format": SCENE_FORMAT, "seed": scene.seed, "frames": frames}


def _require(d: dict, key: str, context: str):
    if key not in d:
        raise ValueError(f"scene JSON missing field {key!r} in {context}")
    return d[key]


def scene_from_dict(data: dict) -> Scene:
    fmt = _require(data, "format", "document root")
    if fmt != SCENE_FORMAT:
        raise ValueError(f"unsupported scene format {fmt!r}, expected {SCENE_FORMAT!r}")
    frames = []
    for i, fd in enumerate(_require(data, "frames", "document root")):
        ctx = f"frames[{i}]"
        boxes = [
            Box3D(
                center=np.asarray(_require(bd, "center", ctx)),
                size=tuple(_require(bd, "size", ctx)),
                yaw=_require(bd, "yaw", ctx),
                velocity=np.asarray(_require(bd, "velocity", ctx)),
                class_id=int(_require(bd, "class_id", ctx)),
                is_stationary=bool(_require(bd, "is_stationary", ctx)),
                visibility=int(_require(bd, "visibility", ctx)),
            )
            for bd in _require(fd, "boxes", ctx)
        ]
        lidar_d = _require(fd, "lidar", ctx)
        cameras = [
            CameraModel(
                fx=_require(cd, "fx", ctx),
                fy=_require(cd, "fy", ctx),
                cx=_require(cd, "cx", ctx),
                cy=_require(cd, "cy", ctx),
                ego_to_cam=_transform_from_dict(_require(cd, "ego_to_cam", ctx)),
                image_width=int(_require(cd, "image_width", ctx)),
                image_height=int(_require(cd, "image_height", ctx)),
            )
            for cd in _require(fd, "cameras", ctx)
        ]
        frames.append(
            Frame(
                timestamp=_require(fd, "timestamp", ctx),
                ego_pose=_transform_from_dict(_require(fd, "ego_pose", ctx)),
                boxes=boxes,
                lidar=PointCloud(
                    np.asarray(_require(lidar_d, "points", ctx)).reshape(-1, 3),
                    _require(lidar_d, "frame_tag", ctx),
                ),
                cameras=cameras,
            )
        )
    return Scene(frames, int(_require(data, "seed", "document root")))


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))
