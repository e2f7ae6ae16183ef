"""Self-distillation core: shared-parameter BEV encoding and the
teacher-normalized per-cell L2 alignment loss, plus a finite-difference
harness that validates the analytic student gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .view_transform import BevFeatureGrid

DEFAULT_NORM_EPS = 1e-6


class BevEncoder:
    """Deterministic per-sample map over BEV grids with fixed shared parameters.

    Subclasses implement apply() on a (B, H, W, C) batch; per-sample results
    must not depend on the other samples in the batch, so batching is purely
    an execution detail.
    """

    name = "base"

    def apply(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, grid: BevFeatureGrid) -> BevFeatureGrid:
        out = self.apply(grid.values[None])[0]
        return BevFeatureGrid(out, grid.cfg)


class IdentityEncoder(BevEncoder):
    name = "identity"

    def apply(self, batch: np.ndarray) -> np.ndarray:
        return np.array(batch, dtype=np.float64, copy=True)


class BoxBlurEncoder(BevEncoder):
    """Fixed 3x3 box blur with zero padding, applied per channel.

    Every output cell is the mean of the 3x3 stencil around it, with cells
    outside the grid counted as zeros (divisor stays 9 at the borders).
    """

    name = "box_blur"

    def apply(self, batch: np.ndarray) -> np.ndarray:
        arr = np.asarray(batch, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"expected (B, H, W, C), got shape {arr.shape}")
        padded = np.pad(arr, ((0, 0), (1, 1), (1, 1), (0, 0)))
        h, w = arr.shape[1:3]
        out = np.zeros_like(arr)
        for dy in range(3):
            for dx in range(3):
                out += padded[:, dy : dy + h, dx : dx + w, :]
        return out / 9.0


_ENCODERS = {cls.name: cls for cls in (IdentityEncoder, BoxBlurEncoder)}


def get_encoder(kind: str) -> BevEncoder:
    try:
        return _ENCODERS[kind]()
    except KeyError:
        raise ValueError(f"unknown encoder kind {kind!r}; choose from {sorted(_ENCODERS)}")


def encode_joint(
    encoder: BevEncoder, student: BevFeatureGrid, teacher: BevFeatureGrid
) -> tuple[BevFeatureGrid, BevFeatureGrid]:
    """Encode student and teacher grids as one batch with shared parameters."""
    if student.values.shape != teacher.values.shape:
        raise ValueError(
            f"shape mismatch: student {student.values.shape} vs "
            f"teacher {teacher.values.shape}"
        )
    batch = np.stack([student.values, teacher.values])
    out = encoder.apply(batch)
    return BevFeatureGrid(out[0], student.cfg), BevFeatureGrid(out[1], teacher.cfg)


def _cell_norms(values: np.ndarray) -> np.ndarray:
    return np.linalg.norm(values, axis=2)


def distillation_loss(
    teacher_enc: BevFeatureGrid,
    student_enc: BevFeatureGrid,
    eps: float = DEFAULT_NORM_EPS,
) -> tuple[float, int]:
    """Mean per-cell L2 distance after normalizing by the teacher cell norm.

    Cells whose teacher norm falls below eps are excluded from the mean;
    with no included cells the loss is 0. Returns (loss, included_cells).
    """
    t, s = teacher_enc.values, student_enc.values
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: teacher {t.shape} vs student {s.shape}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    norms = _cell_norms(t)
    included = norms >= eps
    count = int(included.sum())
    if count == 0:
        return 0.0, 0
    diff = _cell_norms(t - s)
    terms = diff[included] / norms[included]
    return float(terms.mean()), count


@dataclass(frozen=True)
class GradientCheckResult:
    """Outcome of comparing the analytic student gradient to finite differences."""

    max_rel_error: float
    checked_components: int
    skipped_cells: int


def loss_gradient_check(
    teacher_enc: BevFeatureGrid,
    student_enc: BevFeatureGrid,
    eps: float = DEFAULT_NORM_EPS,
    h: float = 1e-5,
) -> GradientCheckResult:
    """Validate the analytic gradient of the loss w.r.t. student features.

    The analytic gradient at an included cell is (s - t) / (K * |t - s| *
    |t|) with K the included-cell count. Cells where |t - s| is within 10*h
    of the non-differentiable point are skipped and reported. Central
    differences with step h provide the reference.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    t, s = teacher_enc.values, student_enc.values
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: teacher {t.shape} vs student {s.shape}")

    norms = _cell_norms(t)
    included = norms >= eps
    count = int(included.sum())
    if count == 0:
        return GradientCheckResult(0.0, 0, 0)

    diff_norm = _cell_norms(t - s)
    checkable = included & (diff_norm > 10.0 * h)
    skipped = int((included & ~checkable).sum())

    analytic = np.zeros_like(s)
    rows, cols = np.nonzero(checkable)
    for i, j in zip(rows, cols):
        analytic[i, j] = (s[i, j] - t[i, j]) / (count * diff_norm[i, j] * norms[i, j])

    max_rel = 0.0
    n_checked = 0
    work = s.copy()
    grid = lambda vals: BevFeatureGrid(vals, student_enc.cfg)
    for i, j in zip(rows, cols):
        for k in range(s.shape[2]):
            orig = work[i, j, k]
            work[i, j, k] = orig + h
            up, _ = distillation_loss(teacher_enc, grid(work), eps)
            work[i, j, k] = orig - h
            down, _ = distillation_loss(teacher_enc, grid(work), eps)
            work[i, j, k] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[i, j, k]
            denom = max(abs(a), abs(numeric), 1e-12)
            max_rel = max(max_rel, abs(a - numeric) / denom)
            n_checked += 1
    return GradientCheckResult(max_rel, n_checked, skipped)
