"""Laser-spot ground truth from dark-field image pairs.

The laser-on and laser-off frames are subtracted on the red channel, the
difference is thresholded, and the largest 4-connected blob is reduced to its
(intensity-weighted) centroid. The same routine doubles as a segmentation-style
detector whose empty outputs are counted by :func:`failure_rate`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .evaluation import euclidean_stats

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class SegmentConfig:
    abs_floor: float = 25.0 / 255.0
    rel_frac: float = 0.5
    min_area: int = 3
    weighted: bool = True


@dataclass
class LaserSegmentation:
    mask: np.ndarray
    valid: bool
    centroid: Optional[np.ndarray]

    def __post_init__(self):
        if self.valid != (self.centroid is not None):
            raise ValueError("valid segmentations carry a centroid and invalid ones do not")


def centroid(mask, weights=None) -> np.ndarray:
    """Mean ``(u, v)`` of the mask pixels, weighted by ``weights`` if given."""
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("centroid of an empty mask")
    w = np.ones(rows.size) if weights is None else np.asarray(weights, dtype=float)[rows, cols]
    total = w.sum()
    if not total > 0:
        raise ValueError("centroid weights must have a positive sum")
    # relative to the blob corner so the result does not depend on where the blob sits
    r0, c0 = rows.min(), cols.min()
    u = np.dot(w, cols - c0) / total + c0
    v = np.dot(w, rows - r0) / total + r0
    return np.array([u, v])


def subtract_and_segment(laser_on, laser_off, config: SegmentConfig = SegmentConfig()) -> LaserSegmentation:
    laser_on = np.asarray(laser_on)
    laser_off = np.asarray(laser_off)
    if laser_on.shape != laser_off.shape:
        raise ValueError(f"image size mismatch: {laser_on.shape} vs {laser_off.shape}")
    red_on = laser_on[..., 0] if laser_on.ndim == 3 else laser_on
    red_off = laser_off[..., 0] if laser_off.ndim == 3 else laser_off
    scale = 255.0 if np.issubdtype(red_on.dtype, np.integer) else 1.0
    diff = np.clip(red_on.astype(np.float64) - red_off.astype(np.float64), 0.0, None) / scale

    threshold = max(config.abs_floor, config.rel_frac * float(diff.max()))
    binary = diff >= threshold
    labels, n = ndimage.label(binary, structure=FOUR_CONNECTED)
    if n == 0:
        return LaserSegmentation(np.zeros_like(binary), False, None)
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1  # ties resolve to the lowest label
    mask = labels == keep
    if sizes[keep - 1] < config.min_area:
        return LaserSegmentation(mask, False, None)
    c = centroid(mask, diff if config.weighted else None)
    return LaserSegmentation(mask, True, c)


def segment_sample(sample, side: str = "left", config: SegmentConfig = SegmentConfig()) -> LaserSegmentation:
    views = sample.images[side]
    return subtract_and_segment(views["laser_on_dark"], views["laser_off_dark"], config)


def failure_rate(segmentations: Sequence[LaserSegmentation]) -> float:
    if len(segmentations) == 0:
        raise ValueError("failure rate of an empty list")
    return sum(not s.valid for s in segmentations) / len(segmentations)


def accuracy_on_valid(segmentations: Sequence[LaserSegmentation], gts):
    """Pixel error stats over the valid frames only; ``None`` if there are none."""
    gts = np.asarray(gts, dtype=float)
    pairs = [(s.centroid, g) for s, g in zip(segmentations, gts) if s.valid]
    if not pairs:
        return None
    preds, targets = zip(*pairs)
    return euclidean_stats(np.array(preds), np.array(targets))
