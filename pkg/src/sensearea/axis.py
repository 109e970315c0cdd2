"""Probe axis from a binary silhouette, and the points sampled along it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_N_POINTS = 50
MIN_ANISOTROPY = 4.0


class DegenerateMaskError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeAxis2D:
    centroid: np.ndarray
    direction: np.ndarray
    extent: tuple[float, float]
    anisotropy: float = math.inf  # ratio of the two covariance eigenvalues

    @property
    def low_anisotropy(self) -> bool:
        return self.anisotropy < MIN_ANISOTROPY

    def flipped(self) -> "ProbeAxis2D":
        t0, t1 = self.extent
        return ProbeAxis2D(self.centroid, -self.direction, (-t1, -t0), self.anisotropy)

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        t0, t1 = self.extent
        return self.centroid + t0 * self.direction, self.centroid + t1 * self.direction


@dataclass(frozen=True)
class PrincipalPoints:
    points: np.ndarray  # (n, 2) pixels, entry end first
    normalized: np.ndarray  # (n, 2) divided by image width/height

    def __len__(self):
        return self.points.shape[0]


def mask_coords(mask) -> np.ndarray:
    rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
    return np.column_stack([cols, rows]).astype(np.float64)


def principal_direction(cov_xx: float, cov_xy: float, cov_yy: float):
    """Closed-form major eigenpair of a symmetric 2x2 matrix.

    Returns ``(direction, lambda_major, lambda_minor)``.
    """
    half_trace = 0.5 * (cov_xx + cov_yy)
    radius = math.hypot(0.5 * (cov_xx - cov_yy), cov_xy)
    lam1, lam2 = half_trace + radius, half_trace - radius
    if cov_xy == 0.0:
        d = np.array([1.0, 0.0]) if cov_xx >= cov_yy else np.array([0.0, 1.0])
        return d, lam1, lam2
    # two algebraically equivalent eigenvectors; take the better conditioned one
    a = np.array([lam1 - cov_yy, cov_xy])
    b = np.array([cov_xy, lam1 - cov_xx])
    d = a if np.linalg.norm(a) >= np.linalg.norm(b) else b
    return d / np.linalg.norm(d), lam1, lam2


def pca_axis_points(coords, strict: bool = True, min_anisotropy: float = MIN_ANISOTROPY) -> ProbeAxis2D:
    """PCA axis of an ``(N, 2)`` point set.

    With ``strict`` a near-isotropic set (eigenvalue ratio below
    ``min_anisotropy``) raises; otherwise the result is returned with its
    ``anisotropy`` recorded so callers can see it is flagged.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] < 2:
        raise DegenerateMaskError("degenerate mask: fewer than 2 pixels")
    c = coords.mean(axis=0)
    rel = coords - c
    cxx = float(np.mean(rel[:, 0] ** 2))
    cyy = float(np.mean(rel[:, 1] ** 2))
    cxy = float(np.mean(rel[:, 0] * rel[:, 1]))
    if cxx + cyy <= 0.0:
        raise DegenerateMaskError("degenerate mask: zero covariance")
    d, lam1, lam2 = principal_direction(cxx, cxy, cyy)
    anis = math.inf if lam2 <= 1e-12 * lam1 else lam1 / lam2
    if strict and anis < min_anisotropy:
        raise DegenerateMaskError(f"degenerate mask: low anisotropy ({anis:.3g} < {min_anisotropy})")
    proj = rel @ d
    return ProbeAxis2D(c, d, (float(proj.min()), float(proj.max())), anis)


def pca_axis(mask, strict: bool = True, min_anisotropy: float = MIN_ANISOTROPY) -> ProbeAxis2D:
    return pca_axis_points(mask_coords(mask), strict=strict, min_anisotropy=min_anisotropy)


def _border_distance(p, width, height) -> float:
    u, v = p
    return min(u, width - 1 - u, v, height - 1 - v)


def orient_axis(axis: ProbeAxis2D, mask=None, image_shape=None) -> ProbeAxis2D:
    """Point the axis from the border-touching end of the silhouette toward the tip.

    ``image_shape`` is ``(height, width)``; it defaults to ``mask.shape``. The end
    closer to the image border is taken as the entry. When both ends are equally
    close, the direction with increasing ``u`` (then ``v``) wins.
    """
    if image_shape is None:
        if mask is None:
            raise ValueError("orient_axis needs a mask or an image shape")
        image_shape = np.shape(mask)[:2]
    height, width = image_shape[:2]
    start, end = axis.endpoints()
    d_start = _border_distance(start, width, height)
    d_end = _border_distance(end, width, height)
    if abs(d_start - d_end) > 0.5:
        return axis if d_start < d_end else axis.flipped()
    du, dv = axis.direction
    if du > 0 or (du == 0 and dv > 0):
        return axis
    return axis.flipped()


def sample_principal_points(axis: ProbeAxis2D, n: int = DEFAULT_N_POINTS, image_size=None) -> PrincipalPoints:
    """``n`` evenly spaced points over the axis extent, from ``t_min`` to ``t_max``.

    ``image_size`` is ``(width, height)`` for the normalized copy; without it the
    normalized copy equals the pixel points.
    """
    if n < 2:
        raise ValueError("need at least 2 principal points")
    t = np.linspace(axis.extent[0], axis.extent[1], n)
    pts = axis.centroid[None, :] + t[:, None] * axis.direction[None, :]
    if image_size is None:
        norm = pts.copy()
    else:
        norm = pts / np.asarray(image_size, dtype=np.float64)[None, :]
    return PrincipalPoints(pts, norm)


def probe_points(mask, n: int = DEFAULT_N_POINTS) -> PrincipalPoints:
    """Full pipeline for one view: PCA, orientation, sampling."""
    mask = np.asarray(mask, dtype=bool)
    axis = orient_axis(pca_axis(mask), mask)
    return sample_principal_points(axis, n, image_size=(mask.shape[1], mask.shape[0]))
