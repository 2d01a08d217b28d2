"""CSV tables and small self-contained SVG plots for evaluation results.

CSV schemas (version 1)::

    metrics.csv     model, <label>_iou, <label>_sem, <label>_frames ..., overall_*
    map.csv         model, subset, threshold, map
    per_video.csv   model, video_id, mean_iou, carried_fraction
    attention.csv   frame, slot_0 ... slot_{K-1}
    compare.csv     video_id, iou_a, iou_b, delta, carried_fraction, carried_heavy

Floats are written with ``repr`` so identical inputs give byte-identical files.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from ..annotator import LABELS
from .metrics import MetricsReport

CSV_SCHEMA_VERSION = 1
CARRIED_HEAVY = 0.07

METRIC_COLUMNS = ["model"] + [f"{l.value}_{k}" for l in LABELS for k in ("iou", "sem", "frames")] \
    + ["overall_iou", "overall_sem", "overall_frames"]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def write_metrics_csv(reports: Sequence[MetricsReport], path) -> Path:
    return _write_csv(Path(path), METRIC_COLUMNS,
                      ([r.row()[c] for c in METRIC_COLUMNS] for r in reports))


def write_map_csv(reports: Sequence[MetricsReport], path) -> Path:
    rows = []
    for r in reports:
        for th, v in r.map_curve.items():
            rows.append((r.name, "all", th, v))
        for label, curve in r.label_map_curves.items():
            for th, v in curve.items():
                rows.append((r.name, label, th, v))
    return _write_csv(Path(path), ["model", "subset", "threshold", "map"], rows)


def write_per_video_csv(reports: Sequence[MetricsReport], path) -> Path:
    rows = [(r.name, vid, v, r.carried_fraction.get(vid, float("nan")))
            for r in reports for vid, v in r.per_video]
    return _write_csv(Path(path), ["model", "video_id", "mean_iou", "carried_fraction"], rows)


def write_attention_csv(attention: np.ndarray, path) -> Path:
    """One row per frame of a ``(T, K)`` attention trace."""
    attention = np.asarray(attention, dtype=float)
    if attention.ndim != 2:
        raise ValueError(f"attention trace must be (T, K), got {attention.shape}")
    header = ["frame"] + [f"slot_{k}" for k in range(attention.shape[1])]
    return _write_csv(Path(path), header, ([t, *row] for t, row in enumerate(attention)))


def read_per_video_csv(path) -> dict[str, tuple[float, float]]:
    """``video_id -> (mean_iou, carried_fraction)`` from a per-video CSV."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["video_id"]] = (float(row["mean_iou"]), float(row["carried_fraction"]))
    return out


def compare_per_video(a: Mapping[str, tuple[float, float]], b: Mapping[str, tuple[float, float]],
                      heavy: float = CARRIED_HEAVY) -> tuple[list[tuple], dict]:
    """Pair per-video IoUs of two runs over their shared videos.

    A point is below the diagonal when run B scores lower than run A. Videos
    whose carried-frame fraction exceeds ``heavy`` are flagged.
    """
    shared = sorted(set(a) & set(b))
    rows = []
    for vid in shared:
        ia, carried = a[vid]
        ib = b[vid][0]
        rows.append((vid, ia, ib, ib - ia, carried, carried > heavy))
    deltas = np.array([r[3] for r in rows]) if rows else np.zeros(0)
    summary = {
        "videos": len(rows),
        "below_diagonal": int(np.sum(deltas < 0)),
        "above_diagonal": int(np.sum(deltas > 0)),
        "on_diagonal": int(np.sum(deltas == 0)),
        "mean_delta": float(deltas.mean()) if rows else 0.0,
        "carried_heavy": int(sum(r[5] for r in rows)),
        "carried_heavy_mean_delta": float(np.mean([r[3] for r in rows if r[5]]))
        if any(r[5] for r in rows) else 0.0,
        "only_in_a": sorted(set(a) - set(b)),
        "only_in_b": sorted(set(b) - set(a)),
    }
    return rows, summary


def write_compare_csv(rows: Sequence[tuple], path) -> Path:
    return _write_csv(Path(path), ["video_id", "iou_a", "iou_b", "delta", "carried_fraction",
                                   "carried_heavy"], rows)


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]
_W, _H, _M = 480, 320, 48


def _svg(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>',
                      f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="13">'
                      f'{escape(title)}</text>', *body, "</svg>"]) + "\n"


def _axes(xlabel: str, ylabel: str, xr=(0.0, 1.0), yr=(0.0, 1.0)) -> list[str]:
    x0, y0, x1, y1 = _M, _H - _M, _W - 16, 30
    out = [f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
           f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
           f'<text x="{(x0 + x1) / 2}" y="{_H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{(y0 + y1) / 2}" text-anchor="middle" '
           f'transform="rotate(-90 14 {(y0 + y1) / 2})">{escape(ylabel)}</text>']
    for f in (0.0, 0.5, 1.0):
        x = x0 + f * (x1 - x0)
        y = y0 - f * (y0 - y1)
        out.append(f'<text x="{x:.1f}" y="{y0 + 14}" text-anchor="middle">'
                   f'{xr[0] + f * (xr[1] - xr[0]):g}</text>')
        out.append(f'<text x="{x0 - 4}" y="{y + 4:.1f}" text-anchor="end">'
                   f'{yr[0] + f * (yr[1] - yr[0]):g}</text>')
    return out


def _to_px(x, y, xr=(0.0, 1.0), yr=(0.0, 1.0)) -> tuple[float, float]:
    x0, y0, x1, y1 = _M, _H - _M, _W - 16, 30
    px = x0 + (x - xr[0]) / (xr[1] - xr[0]) * (x1 - x0)
    py = y0 - (y - yr[0]) / (yr[1] - yr[0]) * (y0 - y1)
    return px, py


def svg_line_plot(curves: Mapping[str, Mapping[float, float]], path, title: str = "",
                  xlabel: str = "IoU threshold", ylabel: str = "MAP") -> Path:
    body = _axes(xlabel, ylabel)
    for i, (name, curve) in enumerate(curves.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = [_to_px(x, y) for x, y in sorted(curve.items()) if np.isfinite(y)]
        if pts:
            body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="'
                        + " ".join(f"{x:.2f},{y:.2f}" for x, y in pts) + '"/>')
        body.append(f'<text x="{_W - 20}" y="{44 + 14 * i}" text-anchor="end" '
                    f'fill="{color}">{escape(name)}</text>')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_svg(body, title))
    return path


def svg_scatter(points: Sequence[tuple[float, float, bool]], path, title: str = "",
                xlabel: str = "run A IoU", ylabel: str = "run B IoU") -> Path:
    """Per-video scatter with a diagonal; flagged points are drawn in red."""
    body = _axes(xlabel, ylabel)
    (ax, ay), (bx, by) = _to_px(0, 0), _to_px(1, 1)
    body.append(f'<line x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}" stroke="#999" '
                'stroke-dasharray="4 3"/>')
    for x, y, flag in points:
        px, py = _to_px(x, y)
        body.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.5" '
                    f'fill="{"#d62728" if flag else "#1f77b4"}"/>')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_svg(body, title))
    return path


def svg_heatmap(matrix: np.ndarray, path, title: str = "", xlabel: str = "frame",
                ylabel: str = "slot") -> Path:
    """Rows of ``matrix`` (``T x K``) become columns of cells, darker = larger."""
    m = np.asarray(matrix, dtype=float)
    body = [f'<text x="{_W / 2}" y="{_H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="14" y="{_H / 2}" text-anchor="middle" '
            f'transform="rotate(-90 14 {_H / 2})">{escape(ylabel)}</text>']
    if m.size:
        T, K = m.shape
        cw = (_W - _M - 16) / T
        ch = (_H - _M - 30) / K
        for t in range(T):
            for k in range(K):
                shade = int(round(255 * (1.0 - float(np.clip(m[t, k], 0.0, 1.0)))))
                body.append(f'<rect x="{_M + t * cw:.2f}" y="{30 + k * ch:.2f}" '
                            f'width="{cw:.2f}" height="{ch:.2f}" '
                            f'fill="rgb({shade},{shade},255)"/>')
        for k in range(K):
            body.append(f'<text x="{_M - 4}" y="{30 + (k + 0.5) * ch + 4:.1f}" '
                        f'text-anchor="end">{k}</text>')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_svg(body, title))
    return path


def export_reports(reports: Sequence[MetricsReport], out_dir,
                   attention: Optional[Mapping[str, np.ndarray]] = None) -> list[Path]:
    """Write every table and plot for ``reports`` under ``out_dir``.

    ``attention`` maps a trace name (e.g. a video id) to its ``(T, K)`` trace.
    With no reports the CSVs contain headers only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [write_metrics_csv(reports, out / "metrics.csv"),
             write_map_csv(reports, out / "map.csv"),
             write_per_video_csv(reports, out / "per_video.csv")]
    files.append(svg_line_plot({r.name: r.map_curve for r in reports}, out / "map.svg",
                               title="MAP over IoU thresholds"))
    for r in reports:
        if r.label_map_curves:
            files.append(svg_line_plot(r.label_map_curves, out / f"map_{r.name}_by_label.svg",
                                       title=f"{r.name}: MAP per frame type"))
    for name, trace in (attention or {}).items():
        files.append(write_attention_csv(trace, out / f"attention_{name}.csv"))
        files.append(svg_heatmap(np.asarray(trace), out / f"attention_{name}.svg",
                                 title=f"attention over slots: {name}"))
    return files
