"""IoU, per-subtask summaries, MAP curves and grid localization scores."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..annotator import LABELS, FrameLabel
from ..scene_sim import CameraParams, ProjectionError, image_to_floor

THRESHOLDS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


def iou(a, b) -> float:
    """Intersection over union of two ``(x1, y1, x2, y2)`` boxes; 0 if the union is empty."""
    return float(iou_batch(np.asarray(a, dtype=float)[None], np.asarray(b, dtype=float)[None])[0])


def iou_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise IoU over matching leading dimensions ``(..., 4)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    area_a = np.clip(a[..., 2] - a[..., 0], 0, None) * np.clip(a[..., 3] - a[..., 1], 0, None)
    area_b = np.clip(b[..., 2] - b[..., 0], 0, None) * np.clip(b[..., 3] - b[..., 1], 0, None)
    union = area_a + area_b - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.clip(out, 0.0, 1.0)


def reporting_boxes(pred: np.ndarray) -> np.ndarray:
    """Order corners and clamp to the image, as done for every reported number."""
    pred = np.asarray(pred, dtype=float)
    lo = np.minimum(pred[..., :2], pred[..., 2:])
    hi = np.maximum(pred[..., :2], pred[..., 2:])
    return np.clip(np.concatenate([lo, hi], axis=-1), 0.0, 1.0)


def mean_sem(values: np.ndarray) -> tuple[float, float]:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


@dataclass
class MetricsReport:
    per_label: dict[str, tuple[float, float, int]]
    overall: tuple[float, float, int]
    per_video: list[tuple[str, float]]
    map_curve: dict[float, float] = field(default_factory=dict)
    label_map_curves: dict[str, dict[float, float]] = field(default_factory=dict)
    grid: Optional["GridResult"] = None
    name: str = ""
    carried_fraction: dict[str, float] = field(default_factory=dict)

    def row(self) -> dict:
        d = {"model": self.name}
        for l in LABELS:
            m, s, n = self.per_label[l.value]
            d[f"{l.value}_iou"], d[f"{l.value}_sem"], d[f"{l.value}_frames"] = m, s, n
        d["overall_iou"], d["overall_sem"], d["overall_frames"] = self.overall
        return d

    def table(self) -> str:
        cols = [l.value for l in LABELS] + ["overall"]
        lines = [f"{'Mean IoU +- SEM':<22}" + "".join(f"{c:>18}" for c in cols)]
        cells = [self.per_label[c] for c in cols[:-1]] + [self.overall]
        lines.append(f"{self.name:<22}" + "".join(
            f"{100 * m:>10.2f} +-{100 * s:>5.2f}" if n else f"{'-':>18}" for m, s, n in cells))
        return "\n".join(lines)


def evaluate(pred: np.ndarray, gt: np.ndarray, labels: np.ndarray,
             video_ids: Sequence[str] | None = None, name: str = "") -> MetricsReport:
    """Per-frame IoU grouped by frame label.

    ``pred`` and ``gt`` are ``(N, T, 4)``; ``labels`` holds label indices
    ``(N, T)`` into :data:`LABELS`. SEMs use per-frame values (sample std,
    ``n - 1``); the per-video list carries each video's mean IoU.
    """
    ious = iou_batch(reporting_boxes(pred), gt)
    labels = np.asarray(labels)
    per_label = {}
    for k, l in enumerate(LABELS):
        vals = ious[labels == k]
        m, s = mean_sem(vals)
        per_label[l.value] = (m, s, int(vals.size))
    m, s = mean_sem(ious)
    if video_ids is None:
        video_ids = [str(i) for i in range(ious.shape[0])]
    per_video = [(vid, float(v.mean())) for vid, v in zip(video_ids, ious)]
    carried = LABELS.index(FrameLabel.CARRIED)
    fractions = {vid: float(np.mean(l == carried)) for vid, l in zip(video_ids, labels)}
    return MetricsReport(per_label, (m, s, int(ious.size)), per_video, name=name,
                         carried_fraction=fractions)


def average_precision(ious: np.ndarray, threshold: float) -> float:
    ious = np.asarray(ious)
    return float(np.mean(ious > threshold)) if ious.size else float("nan")


def map_curve(pred: np.ndarray, gt: np.ndarray, thresholds: Sequence[float] = THRESHOLDS,
              labels: np.ndarray | None = None, label: FrameLabel | None = None) -> dict[float, float]:
    """Mean over videos of the fraction of frames with IoU strictly above each threshold.

    With ``label`` given, only frames of that label count and videos without
    any such frame are skipped.
    """
    ious = iou_batch(reporting_boxes(pred), gt)
    if label is not None:
        code = LABELS.index(FrameLabel(label))
        per_video = [v[l == code] for v, l in zip(ious, np.asarray(labels))]
        per_video = [v for v in per_video if v.size]
    else:
        per_video = list(ious)
    out = {}
    for th in thresholds:
        out[float(th)] = float(np.mean([average_precision(v, th) for v in per_video])) \
            if per_video else float("nan")
    return out


@dataclass
class GridResult:
    accuracy: float
    mean_l1: float
    cells_pred: list[tuple[int, int]] = field(default_factory=list)
    cells_true: list[tuple[int, int]] = field(default_factory=list)


def floor_cell(x: float, y: float, half_extent: float, n: int = 6) -> tuple[int, int]:
    """Half-open cell index of a floor point; points off the floor snap to the border."""
    size = 2.0 * half_extent / n
    col = int(np.floor((x + half_extent) / size))
    row = int(np.floor((y + half_extent) / size))
    return min(max(col, 0), n - 1), min(max(row, 0), n - 1)


def grid_eval(last_boxes: np.ndarray, true_positions: np.ndarray, camera: CameraParams,
              half_extent: float, plane_z: float = 0.0, n: int = 6) -> GridResult:
    """Score final-frame predictions on an ``n x n`` floor grid.

    Each predicted box center is cast back through the camera onto the plane
    ``z = plane_z`` (the target's resting center height) and binned;
    the truth is binned from the target's world position.
    """
    last_boxes = reporting_boxes(last_boxes)
    pred_cells, true_cells = [], []
    for box, pos in zip(last_boxes, np.asarray(true_positions)):
        u, v = 0.5 * (box[0] + box[2]), 0.5 * (box[1] + box[3])
        try:
            fx, fy = image_to_floor(camera, u, v, plane_z)
        except ProjectionError:
            # above the horizon: farthest row
            fx, fy = 0.0, half_extent
        pred_cells.append(floor_cell(fx, fy, half_extent, n))
        true_cells.append(floor_cell(pos[0], pos[1], half_extent, n))
    if not pred_cells:
        raise ValueError("no videos to score")
    p, t = np.array(pred_cells), np.array(true_cells)
    acc = float(np.mean(np.all(p == t, axis=1)))
    l1 = float(np.mean(np.abs(p - t).sum(axis=1)))
    return GridResult(acc, l1, pred_cells, true_cells)
