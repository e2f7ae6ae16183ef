"""Point cloud densification for sparse scenes.

Two strategies: frame combination pulls stationary-object returns from
temporally adjacent frames into the current frame, and pseudo point
assignment gives each still-empty, well-visible, in-range box a single
synthetic point at its 2D box center with the minimum projected-corner
depth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Box3D,
    CameraModel,
    PointCloud,
    points_in_box,
    project_box3d_to_box2d,
    visible_corner_rect,
)
from .labels import (
    DepthDistributionMap,
    HardLabels,
    SegmentationMap,
)
from .scene import Frame, Scene

log = logging.getLogger(__name__)

VISIBILITY_GATE = (3, 4)


@dataclass(frozen=True)
class PseudoPoint:
    """Synthetic return at a box's 2D center with its nearest-corner depth."""

    u: float
    v: float
    depth: float
    source_box: int

    def __post_init__(self):
        if self.depth <= 0:
            raise ValueError(f"pseudo point depth must be positive, got {self.depth}")


@dataclass(frozen=True)
class PciReport:
    """Bookkeeping for how densification changed box coverage."""

    total_boxes: int
    boxes_without_points_before: int
    boxes_without_points_after_fc: int
    boxes_assigned_pseudo: int
    boxes_unrecoverable: int

    def __post_init__(self):
        counts = (
            self.total_boxes,
            self.boxes_without_points_before,
            self.boxes_without_points_after_fc,
            self.boxes_assigned_pseudo,
            self.boxes_unrecoverable,
        )
        if any(c < 0 for c in counts):
            raise ValueError(f"negative count in report: {self}")
        if self.boxes_without_points_after_fc > self.boxes_without_points_before:
            raise ValueError(
                "combination cannot increase empty boxes: "
                f"{self.boxes_without_points_after_fc} > {self.boxes_without_points_before}"
            )
        if (
            self.boxes_assigned_pseudo + self.boxes_unrecoverable
            != self.boxes_without_points_after_fc
        ):
            raise ValueError(
                "assigned + unrecoverable must equal the post-combination empty count"
            )


def _empty_box_mask(points: np.ndarray, boxes: list[Box3D]) -> np.ndarray:
    """True per box when no point lies inside it (closed boundary)."""
    empty = np.ones(len(boxes), dtype=bool)
    if len(points):
        for i, box in enumerate(boxes):
            empty[i] = not points_in_box(box, points).any()
    return empty


def frame_combination(current: Frame, adjacent: list[Frame]) -> PointCloud:
    """Merge stationary-object returns from adjacent frames into the current one.

    Adjacent clouds are mapped through the relative ego poses; only points
    landing inside a current-frame box flagged stationary survive. Clutter
    and dynamic-object points from other frames never carry over. Output
    order: current points first, then kept points per adjacent frame in the
    given order.
    """
    stationary = [b for b in current.boxes if b.is_stationary]
    merged = [current.lidar.points]
    to_current = current.ego_pose.inverse()
    for frame in adjacent:
        if frame.tag == current.tag:
            raise ValueError(
                f"adjacent frame carries the current frame's tag {current.tag!r}"
            )
        if not stationary or not len(frame.lidar.points):
            continue
        relative = to_current.compose(frame.ego_pose)
        moved = relative.apply(frame.lidar.points)
        keep = np.zeros(len(moved), dtype=bool)
        for box in stationary:
            keep |= points_in_box(box, moved)
        merged.append(moved[keep])
    return PointCloud(np.concatenate(merged), current.tag)


def pseudo_point_assignment(
    combined: PointCloud,
    boxes: list[Box3D],
    cam: CameraModel,
    depth_range: tuple[float, float],
) -> list[PseudoPoint]:
    """One synthetic point per box that stayed empty after combination.

    A box qualifies when it contains zero combined points, its nearest
    projected corner depth lies within depth_range, its visibility is 3 or
    4, and it projects to a usable 2D box whose (unclipped) center falls
    inside the image. The emitted point sits at that center with the
    minimum positive corner depth.
    """
    lo, hi = depth_range
    out = []
    for i, box in enumerate(boxes):
        if box.visibility not in VISIBILITY_GATE:
            continue
        if len(combined.points) and points_in_box(box, combined.points).any():
            continue
        rect = visible_corner_rect(cam, box)
        if rect is None:
            continue
        x1, y1, x2, y2, d_corner = rect
        if not lo <= d_corner <= hi:
            continue
        if project_box3d_to_box2d(cam, box) is None:
            continue  # entirely off-image
        u, v = (x1 + x2) / 2.0, (y1 + y2) / 2.0
        if not (0.0 <= u <= cam.image_width - 1 and 0.0 <= v <= cam.image_height - 1):
            continue  # center of a partially visible box landed off-image
        out.append(PseudoPoint(u=u, v=v, depth=d_corner, source_box=i))
    return out


def pci_statistics(
    scene: Scene,
    cam: CameraModel,
    depth_range: tuple[float, float],
    fc_enabled: bool = True,
    ppa_enabled: bool = True,
) -> PciReport:
    """Count how many current-frame boxes each densification stage rescued."""
    current = scene.current
    before = int(_empty_box_mask(current.lidar.points, current.boxes).sum())
    combined = frame_combination(current, scene.past) if fc_enabled else current.lidar
    after_fc = int(_empty_box_mask(combined.points, current.boxes).sum())
    pseudo = (
        pseudo_point_assignment(combined, current.boxes, cam, depth_range)
        if ppa_enabled
        else []
    )
    assigned = len(pseudo)
    return PciReport(
        total_boxes=len(current.boxes),
        boxes_without_points_before=before,
        boxes_without_points_after_fc=after_fc,
        boxes_assigned_pseudo=assigned,
        boxes_unrecoverable=after_fc - assigned,
    )


def inject_pseudo_points(
    hard: HardLabels, pseudo: list[PseudoPoint], feature_stride: int
) -> HardLabels:
    """Write pseudo points into the hard labels as foreground one-hots.

    Cells already valid (from real points, or an earlier pseudo point in the
    list) are left untouched; measured data outranks approximation. Pseudo
    depths outside the bin range are skipped and logged.
    """
    h_f, w_f = hard.shape
    depth = hard.depth.values.copy()
    seg = hard.seg.values.copy()
    valid = hard.valid_mask.copy()
    cfg = hard.bin_cfg
    for p in pseudo:
        col = int(p.u // feature_stride)
        row = int(p.v // feature_stride)
        if not (0 <= row < h_f and 0 <= col < w_f):
            raise ValueError(
                f"pseudo point ({p.u:.1f}, {p.v:.1f}) outside the "
                f"{h_f}x{w_f} feature grid at stride {feature_stride}"
            )
        b = cfg.bin_index(p.depth)
        if b is None:
            log.debug(
                "pseudo point for box %d skipped: depth %.2f outside [%s, %s)",
                p.source_box,
                p.depth,
                cfg.d_min,
                cfg.d_max,
            )
            continue
        if valid[row, col]:
            continue
        depth[row, col, b] = 1.0
        seg[row, col] = 1.0
        valid[row, col] = True
    return HardLabels(
        depth=DepthDistributionMap(depth, cfg),
        seg=SegmentationMap(seg),
        valid_mask=valid,
    )
