"""Multi-scale foreground enhancement: elliptical heatmap targets, threshold
filtering, average-pool downsampling, pyramid fusion, and the penalty-reduced
focal loss that supervises heatmaps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box2D

DEFAULT_SIGMA_DIVISOR = 6.0
FOCAL_CLAMP_EPS = 1e-6


@dataclass(frozen=True)
class FeaturePyramid:
    """Three feature maps at strides 4, 8, 16 with a shared channel count."""

    f4: np.ndarray
    f8: np.ndarray
    f16: np.ndarray

    def __post_init__(self):
        for name in ("f4", "f8", "f16"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 3:
                raise ValueError(f"{name} must be (H, W, C), got shape {arr.shape}")
            object.__setattr__(self, name, arr)
        if not (self.f4.shape[2] == self.f8.shape[2] == self.f16.shape[2]):
            raise ValueError("pyramid levels must share a channel count")
        h, w, _ = self.f16.shape
        if self.f8.shape[:2] != (2 * h, 2 * w) or self.f4.shape[:2] != (4 * h, 4 * w):
            raise ValueError(
                f"pyramid spatial sizes must be in 1:2:4 ratio, got "
                f"{self.f4.shape[:2]}, {self.f8.shape[:2]}, {self.f16.shape[:2]}"
            )

    @property
    def channels(self) -> int:
        return self.f16.shape[2]


@dataclass(frozen=True)
class ForegroundHeatmap:
    """Stride-4 foreground confidence map with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"heatmap must be 2-D, got shape {v.shape}")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("heatmap values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def elliptical_gaussian_heatmap(
    boxes2d: list[Box2D],
    out_h: int,
    out_w: int,
    stride: int,
    sigma_divisor: float = DEFAULT_SIGMA_DIVISOR,
) -> ForegroundHeatmap:
    """Draw one axis-aligned elliptical Gaussian per 2D box, combined by maximum.

    Heatmap cell (i, j) samples the closed form at pixel (j*stride, i*stride).
    Per-axis spread scales with the box dimensions: sigma_x = width /
    (stride * sigma_divisor), likewise for y, so the default divisor puts the
    box edge at roughly three sigma from the center. Degenerate (zero-extent)
    axes collapse to a near-delta.
    """
    hm = np.zeros((out_h, out_w))
    if not boxes2d:
        return ForegroundHeatmap(hm)
    yy, xx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    for box in boxes2d:
        cu, cv = box.center
        cx, cy = cu / stride, cv / stride
        sx = max(box.width / (stride * sigma_divisor), 1e-12)
        sy = max(box.height / (stride * sigma_divisor), 1e-12)
        g = np.exp(-((xx - cx) ** 2 / (2 * sx**2) + (yy - cy) ** 2 / (2 * sy**2)))
        np.maximum(hm, g, out=hm)
    return ForegroundHeatmap(hm)


def threshold_filter(heatmap: ForegroundHeatmap, beta: float) -> ForegroundHeatmap:
    """Zero out cells below beta; values at or above beta pass unchanged."""
    v = heatmap.values
    return ForegroundHeatmap(np.where(v >= beta, v, 0.0))


def downsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping factor x factor average pooling, per channel.

    Accepts (H, W) or (H, W, C); spatial dimensions must be divisible by the
    factor.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C), got shape {arr.shape}")
    h, w = arr.shape[:2]
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide spatial dims {h}x{w}")
    shape = (h // factor, factor, w // factor, factor) + arr.shape[2:]
    return arr.reshape(shape).mean(axis=(1, 3))


def msfe_fuse(pyr: FeaturePyramid, heatmap: ForegroundHeatmap, beta: float) -> np.ndarray:
    """Fuse foreground-gated high-resolution features into the stride-16 map.

    Computes the filtered heatmap, gates f4 and f8 with it (broadcast across
    channels), average-pools both down to stride 16, and adds them to f16.
    """
    if heatmap.shape != pyr.f4.shape[:2]:
        raise ValueError(
            f"heatmap shape {heatmap.shape} must match f4 spatial {pyr.f4.shape[:2]}"
        )
    mask4 = threshold_filter(heatmap, beta).values
    mask8 = downsample(mask4, 2)
    term8 = downsample(pyr.f8 * mask8[:, :, None], 2)
    term4 = downsample(pyr.f4 * mask4[:, :, None], 4)
    return pyr.f16 + term8 + term4


def gaussian_focal_loss(
    pred: ForegroundHeatmap,
    target: ForegroundHeatmap,
    alpha: float = 2.0,
    gamma: float = 4.0,
) -> float:
    """Penalty-reduced focal loss for Gaussian heatmap targets.

    Cells with target exactly 1 are positives: -(1-p)^alpha * log(p).
    Everywhere else: -(1-t)^gamma * p^alpha * log(1-p). The sum is averaged
    over the positive count (floored at 1); predictions are clamped away
    from 0 and 1 before the logs.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred.values, FOCAL_CLAMP_EPS, 1.0 - FOCAL_CLAMP_EPS)
    t = target.values
    pos = t == 1.0
    pos_loss = -((1.0 - p[pos]) ** alpha) * np.log(p[pos])
    neg_loss = -((1.0 - t[~pos]) ** gamma) * (p[~pos] ** alpha) * np.log1p(-p[~pos])
    n_pos = max(int(pos.sum()), 1)
    return float((pos_loss.sum() + neg_loss.sum()) / n_pos)
