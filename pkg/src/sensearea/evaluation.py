"""Error metrics and summary-table reports for intersection predictors.

Conventions
-----------
* Per-frame 2D error is the Euclidean pixel distance; ``std`` is the population
  standard deviation and an even-length median averages the middle pair.
* R2 is computed jointly over both coordinates: ``1 - SS_res / SS_tot`` with
  ``SS_tot`` taken about the per-coordinate target means.
* 3D error backprojects the prediction with the depth map at the predicted
  pixel. When that depth is missing, the median of the valid depths in the
  surrounding 5x5 window is used; frames with no valid depth in the window are
  excluded and counted.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from . import geometry as geo

MISSING = "—"  # em dash, the conventional empty table cell

GREEN = (0, 255, 0)
BLUE = (0, 0, 255)


@dataclass(frozen=True)
class PixelStats:
    mean: float
    std: float
    median: float


def euclidean_errors(preds, gts) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    if preds.shape != gts.shape:
        raise ValueError(f"length mismatch: {preds.shape[0]} predictions vs {gts.shape[0]} targets")
    if preds.shape[0] == 0:
        raise ValueError("no frames to evaluate")
    return np.sqrt(np.sum((preds - gts) ** 2, axis=1))


def summarize(errors) -> PixelStats:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("no errors to summarize")
    return PixelStats(float(np.mean(errors)), float(np.std(errors)), float(np.median(errors)))


def euclidean_stats(preds, gts) -> PixelStats:
    """Mean, population std and median of the per-frame Euclidean errors."""
    return summarize(euclidean_errors(preds, gts))


def r2_score(preds, gts) -> float:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    if preds.shape != gts.shape:
        raise ValueError("length mismatch")
    if gts.shape[0] < 2:
        raise ValueError("undefined R2: need at least 2 frames")
    ss_tot = float(np.sum((gts - gts.mean(axis=0)) ** 2))
    if ss_tot == 0.0:
        raise ValueError("undefined R2: constant targets")
    ss_res = float(np.sum((preds - gts) ** 2))
    return 1.0 - ss_res / ss_tot


def lookup_depth(depth: geo.DepthMap, px, window: int = 5):
    """Depth at the pixel nearest ``px``, with the median-window fallback.

    Returns ``(depth or None, used_fallback)``.
    """
    values = depth.values
    h, w = values.shape
    col = int(np.clip(np.rint(px[0]), 0, w - 1))
    row = int(np.clip(np.rint(px[1]), 0, h - 1))
    centre = values[row, col]
    if centre > 0:
        return float(centre), False
    half = window // 2
    patch = values[max(row - half, 0) : row + half + 1, max(col - half, 0) : col + half + 1]
    ok = patch[patch > 0]
    if ok.size == 0:
        return None, True
    return float(np.median(ok)), True


def error_3d(pred_px, depth: geo.DepthMap, gt_3d, rig: geo.StereoRig, which="left", window: int = 5):
    """Millimeter distance between the backprojected prediction and ``gt_3d``.

    Returns ``None`` when the frame has to be excluded.
    """
    z, _ = lookup_depth(depth, pred_px, window)
    if z is None:
        return None
    p = geo.backproject(np.asarray(pred_px, dtype=float), z, rig, which)
    return float(np.linalg.norm(p - np.asarray(gt_3d, dtype=float)) * 1000.0)


@dataclass
class EvalReport:
    name: str
    n_frames: int
    n_valid: int
    mean_px: Optional[float] = None
    std_px: Optional[float] = None
    median_px: Optional[float] = None
    r2: Optional[float] = None
    mean_mm: Optional[float] = None
    std_mm: Optional[float] = None
    median_mm: Optional[float] = None
    n_3d_excluded: int = 0
    failure_rate: Optional[float] = None
    fingerprint: str = ""
    frames: list = field(default_factory=list, repr=False)  # (sample_id, pred or None, gt)

    @property
    def n_failed(self) -> int:
        return self.n_frames - self.n_valid

    def row(self) -> dict:
        return {
            "name": self.name,
            "n_frames": self.n_frames,
            "n_valid": self.n_valid,
            "failure_rate": self.failure_rate,
            "mean_px": self.mean_px,
            "std_px": self.std_px,
            "median_px": self.median_px,
            "r2": self.r2,
            "mean_mm": self.mean_mm,
            "std_mm": self.std_mm,
            "median_mm": self.median_mm,
            "n_3d_excluded": self.n_3d_excluded,
            "fingerprint": self.fingerprint,
        }


@dataclass(frozen=True)
class EvalOptions:
    name: str = "predictor"
    rig: Optional[geo.StereoRig] = None
    window: int = 5
    segmentation_style: bool = False
    fingerprint: str = ""


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


Predictor = Callable[[object], Optional[np.ndarray]]


def evaluate(predictor: Predictor, samples: Iterable, options: EvalOptions = EvalOptions()) -> EvalReport:
    """Run ``predictor`` on every sample and assemble the full statistics.

    A predictor returns a left-image pixel, or ``None`` when it fails to
    produce one (an empty segmentation). Failed frames count toward the
    failure rate and are left out of every accuracy statistic.
    """
    frames = []
    preds, gts, mm = [], [], []
    n_excluded = 0
    has_depth = False
    for sample in samples:
        pred = predictor(sample)
        gt = np.asarray(sample.gt_px_left, dtype=np.float64)
        if pred is None:
            frames.append((sample.sample_id, None, gt))
            continue
        pred = np.asarray(pred, dtype=np.float64).reshape(2)
        frames.append((sample.sample_id, pred, gt))
        preds.append(pred)
        gts.append(gt)
        if sample.depth_left is not None:
            has_depth = True
            if options.rig is None:
                raise ValueError("3D error needs the stereo rig")
            e = error_3d(pred, sample.depth_left, sample.gt_3d, options.rig, "left", options.window)
            if e is None:
                n_excluded += 1
            else:
                mm.append(e)
    if not frames:
        raise ValueError("evaluation split is empty")

    report = EvalReport(options.name, len(frames), len(preds), fingerprint=options.fingerprint, frames=frames)
    if options.segmentation_style or report.n_failed:
        report.failure_rate = report.n_failed / report.n_frames
    if preds:
        stats = euclidean_stats(preds, gts)
        report.mean_px, report.std_px, report.median_px = stats.mean, stats.std, stats.median
        try:
            report.r2 = r2_score(preds, gts)
        except ValueError:
            report.r2 = None
    if has_depth:
        report.n_3d_excluded = n_excluded
        if mm:
            s = summarize(mm)
            report.mean_mm, report.std_mm, report.median_mm = s.mean, s.std, s.median
    return report


# ---------------------------------------------------------------------------
# reporting

COLUMNS = [
    ("name", "Method"),
    ("n_frames", "Frames"),
    ("failure_rate", "Failure"),
    ("mean_px", "2D Mean E."),
    ("std_px", "2D Std."),
    ("median_px", "2D Median"),
    ("r2", "R2 Score"),
    ("mean_mm", "3D Mean E."),
    ("std_mm", "3D Std."),
    ("median_mm", "3D Median"),
]

FOOTER = (
    "2D errors in pixels, 3D errors in mm. Std is the population standard deviation; "
    "R2 is pooled over u and v; failed frames are excluded from accuracy."
)


def _cell(key, value) -> str:
    if value is None:
        return MISSING
    if key == "failure_rate":
        return f"{100 * value:.1f}%"
    if key == "r2":
        return f"{value:.3f}"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def render_report(reports) -> str:
    """Aligned text table, one row per report."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to report")
    header = [title for _, title in COLUMNS]
    rows = [[_cell(key, r.row()[key]) for key, _ in COLUMNS] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    for row in rows:
        lines.append(" | ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths))))
    lines.append("")
    lines.append(FOOTER)
    return "\n".join(lines) + "\n"


def report_csv(reports) -> str:
    buf = io.StringIO()
    keys = list(reports[0].row().keys())
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        row = r.row()
        writer.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in row.items()})
    return buf.getvalue()


def _draw_cross(img, center, color, radius=3):
    h, w = img.shape[:2]
    c = int(np.rint(center[0]))
    r = int(np.rint(center[1]))
    for k in range(-radius, radius + 1):
        for rr, cc in ((r, c + k), (r + k, c)):
            if 0 <= rr < h and 0 <= cc < w:
                img[rr, cc] = color


def _draw_ring(img, center, color, radius=5):
    h, w = img.shape[:2]
    c = int(np.rint(center[0]))
    r = int(np.rint(center[1]))
    for k in range(-radius, radius + 1):
        for rr, cc in ((r - radius, c + k), (r + radius, c + k), (r + k, c - radius), (r + k, c + radius)):
            if 0 <= rr < h and 0 <= cc < w:
                img[rr, cc] = color
    if 0 <= r < h and 0 <= c < w:
        img[r, c] = color


def draw_overlay(image, pred, gt) -> np.ndarray:
    """Ground truth as a green square ring, prediction as a blue cross.

    Both markers are centered on the rounded input coordinates.
    """
    img = np.array(image, dtype=np.uint8, copy=True)
    if gt is not None:
        _draw_ring(img, gt, GREEN)
    if pred is not None:
        _draw_cross(img, pred, BLUE)
    return img


def write_report(reports, out_dir, samples_by_id=None, max_overlays: Optional[int] = None) -> dict:
    """Write ``report.txt``, ``report.csv`` and optional overlay PNGs.

    ``samples_by_id`` maps sample ids to samples whose left standard image is
    used as the overlay background.
    """
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = list(reports)
    (out / "report.txt").write_text(render_report(reports), encoding="utf-8")
    (out / "report.csv").write_text(report_csv(reports), encoding="utf-8")
    written = []
    if samples_by_id:
        for report in reports:
            odir = out / "overlays" / report.name
            odir.mkdir(parents=True, exist_ok=True)
            frames = report.frames if max_overlays is None else report.frames[:max_overlays]
            for sid, pred, gt in frames:
                sample = samples_by_id.get(sid)
                if sample is None:
                    continue
                img = draw_overlay(sample.images["left"]["standard"], pred, gt)
                path = odir / f"{sid}.png"
                Image.fromarray(img).save(path)
                written.append(path)
    return {"text": out / "report.txt", "csv": out / "report.csv", "overlays": written}


def mean_baseline(train_gts) -> Predictor:
    """Always predicts the training-set mean pixel."""
    mu = np.asarray(train_gts, dtype=np.float64).reshape(-1, 2).mean(axis=0)
    return lambda sample: mu.copy()


def constant_predictor(point) -> Predictor:
    point = np.asarray(point, dtype=np.float64)
    return lambda sample: point.copy()
