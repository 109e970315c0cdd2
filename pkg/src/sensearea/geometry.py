"""Pinhole stereo geometry and ray casting against heightfields and the probe.

Coordinate conventions
----------------------
Everything 3D lives in the left-camera frame, in meters: +x right, +y down,
+z forward along the optical axis. The right camera is the left camera
translated by ``baseline`` along +x with identical orientation (rectified rig).

Pixel coordinates are ``(u, v)`` with ``u`` the column and ``v`` the row; the
center of pixel ``[row, col]`` sits at ``(u, v) = (col, row)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

Side = Literal["left", "right"]

INVALID_DEPTH = -1.0
DEPTH_PNG_SCALE = 10000.0  # depth file value = round(depth_m * scale), 0 = invalid

BISECTION_TOL = 1e-7

# Ray-cast hit labels returned by ``cast_scene``.
HIT_NONE = 0
HIT_SURFACE = 1
HIT_PROBE = 2
HIT_TIP_CAP = 3


class GeometryError(ValueError):
    """Raised when a geometric precondition is violated."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")


@dataclass(frozen=True)
class StereoRig:
    left: CameraIntrinsics
    right: CameraIntrinsics
    baseline: float

    def __post_init__(self):
        if not self.baseline > 0:
            raise GeometryError("baseline must be positive")
        if (self.left.width, self.left.height) != (self.right.width, self.right.height):
            raise GeometryError("left and right cameras must share the image size")

    @property
    def width(self) -> int:
        return self.left.width

    @property
    def height(self) -> int:
        return self.left.height

    def camera(self, which: Side) -> CameraIntrinsics:
        if which == "left":
            return self.left
        if which == "right":
            return self.right
        raise GeometryError(f"unknown camera {which!r}")

    def center(self, which: Side) -> np.ndarray:
        """Optical center of the selected camera in the left-camera frame."""
        self.camera(which)
        return np.array([self.baseline if which == "right" else 0.0, 0.0, 0.0])


def make_rig(width=640, height=480, focal=400.0, baseline=0.005) -> StereoRig:
    """Identical pinhole pair with the principal point at the image center."""
    cam = CameraIntrinsics(focal, focal, width / 2.0, height / 2.0, width, height)
    return StereoRig(cam, cam, baseline)


def canonical_rig() -> StereoRig:
    """640x480, fx=fy=400, principal point (320, 240), 5 mm baseline."""
    return make_rig()


@dataclass(frozen=True)
class Ray3:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        direction = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise GeometryError("ray direction must be unit length")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass
class DepthMap:
    """Per-pixel z-depth in meters; ``INVALID_DEPTH`` marks missing pixels."""

    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values > 0

    def to_uint16(self) -> np.ndarray:
        """Encode for a 16-bit PNG: ``round(depth * 1e4)``, 0 where invalid."""
        out = np.zeros(self.values.shape, dtype=np.uint16)
        ok = self.valid
        scaled = np.round(self.values[ok] * DEPTH_PNG_SCALE)
        if scaled.size and scaled.max() > np.iinfo(np.uint16).max:
            raise GeometryError("depth exceeds the 16-bit encodable range")
        out[ok] = scaled.astype(np.uint16)
        return out

    @classmethod
    def from_uint16(cls, encoded: np.ndarray) -> "DepthMap":
        encoded = np.asarray(encoded)
        values = np.where(encoded > 0, encoded / DEPTH_PNG_SCALE, INVALID_DEPTH)
        return cls(values.astype(np.float64))


# ---------------------------------------------------------------------------
# projection


def project(p, rig: StereoRig, which: Side = "left") -> np.ndarray:
    """Project left-frame 3D point(s) ``(..., 3)`` to pixels ``(..., 2)``.

    No clamping to the image is applied.
    """
    cam = rig.camera(which)
    p = np.asarray(p, dtype=float)
    x = p[..., 0] - rig.center(which)[0]
    y, z = p[..., 1], p[..., 2]
    if np.any(z <= 0):
        raise GeometryError("behind camera")
    return np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=-1)


def backproject(pix, depth, rig: StereoRig, which: Side = "left") -> np.ndarray:
    """Inverse of :func:`project` at a known z-depth; returns left-frame points."""
    cam = rig.camera(which)
    pix = np.asarray(pix, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if np.any(depth <= 0):
        raise GeometryError("depth must be positive")
    x = (pix[..., 0] - cam.cx) / cam.fx * depth + rig.center(which)[0]
    y = (pix[..., 1] - cam.cy) / cam.fy * depth
    return np.stack([x, y, np.broadcast_to(depth, x.shape)], axis=-1)


def pixel_rays(pix, rig: StereoRig, which: Side = "left") -> tuple[np.ndarray, np.ndarray]:
    """Unit viewing directions for pixel(s), plus the camera center."""
    cam = rig.camera(which)
    pix = np.asarray(pix, dtype=float)
    d = np.stack(
        [(pix[..., 0] - cam.cx) / cam.fx, (pix[..., 1] - cam.cy) / cam.fy, np.ones(pix.shape[:-1])],
        axis=-1,
    )
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return rig.center(which), d


def triangulate(pix_left, pix_right, rig: StereoRig) -> np.ndarray:
    """Midpoint of the shortest segment between the two viewing rays."""
    pix_left = np.asarray(pix_left, dtype=float)
    pix_right = np.asarray(pix_right, dtype=float)
    if not (np.all(np.isfinite(pix_left)) and np.all(np.isfinite(pix_right))):
        raise GeometryError("pixels must be finite")
    o1, d1 = pixel_rays(pix_left, rig, "left")
    o2, d2 = pixel_rays(pix_right, rig, "right")
    w0 = o1 - o2
    b = np.sum(d1 * d2, axis=-1)
    d = np.sum(d1 * w0, axis=-1)
    e = np.sum(d2 * w0, axis=-1)
    denom = 1.0 - b * b  # a = c = 1 for unit directions
    if np.any(denom < 1e-14):
        raise GeometryError("no intersection: viewing rays are parallel")
    s = (b * e - d) / denom
    t = (e - b * d) / denom
    p1 = o1 + s[..., None] * d1
    p2 = o2 + t[..., None] * d2
    return 0.5 * (p1 + p2)


# ---------------------------------------------------------------------------
# heightfield


class Heightfield:
    """Bilinearly interpolated grid ``z = h(x, y)`` over an axis-aligned rectangle.

    ``heights`` has shape ``(ny + 1, nx + 1)``: one value per grid node, rows
    indexed by y.
    """

    def __init__(self, x0, x1, y0, y1, heights):
        self.heights = np.asarray(heights, dtype=np.float64)
        if self.heights.ndim != 2 or min(self.heights.shape) < 2:
            raise GeometryError("heightfield needs at least 2x2 nodes")
        if not np.all(np.isfinite(self.heights)):
            raise GeometryError("heights must be finite")
        self.x0, self.x1, self.y0, self.y1 = float(x0), float(x1), float(y0), float(y1)
        ny, nx = self.heights.shape[0] - 1, self.heights.shape[1] - 1
        self.nx, self.ny = nx, ny
        self.dx = (self.x1 - self.x0) / nx
        self.dy = (self.y1 - self.y0) / ny
        self.hmin = float(self.heights.min())
        self.hmax = float(self.heights.max())

    @property
    def cell_size(self) -> float:
        return min(self.dx, self.dy)

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.x0 + self.dx * np.arange(self.nx + 1)
        ys = self.y0 + self.dy * np.arange(self.ny + 1)
        return xs, ys

    def _locate(self, x, y):
        gx = np.clip((np.asarray(x, dtype=float) - self.x0) / self.dx, 0.0, self.nx)
        gy = np.clip((np.asarray(y, dtype=float) - self.y0) / self.dy, 0.0, self.ny)
        ix = np.minimum(np.floor(gx).astype(np.intp), self.nx - 1)
        iy = np.minimum(np.floor(gy).astype(np.intp), self.ny - 1)
        return ix, iy, gx - ix, gy - iy

    def height(self, x, y) -> np.ndarray:
        ix, iy, fx, fy = self._locate(x, y)
        h = self.heights
        h00, h01 = h[iy, ix], h[iy, ix + 1]
        h10, h11 = h[iy + 1, ix], h[iy + 1, ix + 1]
        return (h00 * (1 - fx) + h01 * fx) * (1 - fy) + (h10 * (1 - fx) + h11 * fx) * fy

    def gradient(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Partial derivatives of the bilinear interpolant."""
        ix, iy, fx, fy = self._locate(x, y)
        h = self.heights
        h00, h01 = h[iy, ix], h[iy, ix + 1]
        h10, h11 = h[iy + 1, ix], h[iy + 1, ix + 1]
        dhdx = ((h01 - h00) * (1 - fy) + (h11 - h10) * fy) / self.dx
        dhdy = ((h10 - h00) * (1 - fx) + (h11 - h01) * fx) / self.dy
        return dhdx, dhdy

    def normal(self, x, y) -> np.ndarray:
        """Unit normal pointing toward -z (toward the cameras)."""
        gx, gy = self.gradient(x, y)
        n = np.stack([gx, gy, -np.ones_like(gx)], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def contains(self, x, y) -> np.ndarray:
        x, y = np.asarray(x), np.asarray(y)
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


def _as_heightfield(surface) -> Heightfield:
    return surface if isinstance(surface, Heightfield) else surface.heightfield


def _slab_interval(origins, dirs, lo, hi):
    """Parametric [t_enter, t_exit] of rays against an axis-aligned box."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    # zero direction component: inside the slab -> unbounded, outside -> empty
    flat = dirs == 0
    inside = (origins >= lo) & (origins <= hi)
    tmin = np.where(flat, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(flat, np.where(inside, np.inf, -np.inf), tmax)
    return tmin.max(axis=-1), tmax.min(axis=-1)


def intersect_rays_heightfield(origins, dirs, surface, step=None, tol=BISECTION_TOL):
    """First crossing of many rays with a heightfield.

    Rays are marched at ``step`` (default a quarter of the cell size) through
    the surface bounding box, starting at ``t >= 0``; the first sign change of
    ``z(t) - h(x(t), y(t))`` is refined by bisection until the bracket is
    narrower than ``tol``.

    Returns
    -------
    t : (N,) ndarray
        Ray parameter of the hit, ``nan`` where there is none.
    hit : (N,) bool ndarray
    """
    hf = _as_heightfield(surface)
    origins = np.broadcast_to(np.asarray(origins, dtype=float), np.shape(dirs)).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = dirs.shape[0]
    if step is None:
        step = hf.cell_size / 4.0
    pad = 1e-6
    lo = np.array([hf.x0, hf.y0, hf.hmin - pad])
    hi = np.array([hf.x1, hf.y1, hf.hmax + pad])
    t_enter, t_exit = _slab_interval(origins, dirs, lo, hi)
    t_enter = np.maximum(t_enter, 0.0)

    t_hit = np.full(n, np.nan)
    idx = np.flatnonzero(t_enter <= t_exit)
    if idx.size == 0:
        return t_hit, np.zeros(n, dtype=bool)

    def f(rows, t):
        p = origins[rows] + t[:, None] * dirs[rows]
        return p[:, 2] - hf.height(p[:, 0], p[:, 1])

    t_start = t_enter[idx]
    t_end = t_exit[idx]
    f_prev = f(idx, t_start)
    side0 = f_prev >= 0
    t_prev = t_start.copy()

    exact = f_prev == 0
    t_hit[idx[exact]] = t_start[exact]

    brackets_lo, brackets_hi, brackets_rows = [], [], []
    active = ~exact
    rows, start, end, tp, s0 = idx[active], t_start[active], t_end[active], t_prev[active], side0[active]
    k = 1
    while rows.size:
        t_cur = np.minimum(start + k * step, end)
        fc = f(rows, t_cur)
        crossed = (fc >= 0) != s0
        if np.any(crossed):
            brackets_rows.append(rows[crossed])
            brackets_lo.append(tp[crossed])
            brackets_hi.append(t_cur[crossed])
        keep = ~crossed & (t_cur < end)
        rows, start, end, s0 = rows[keep], start[keep], end[keep], s0[keep]
        tp = t_cur[keep]
        k += 1

    if brackets_rows:
        rows = np.concatenate(brackets_rows)
        lo_t = np.concatenate(brackets_lo)
        hi_t = np.concatenate(brackets_hi)
        s_lo = f(rows, lo_t) >= 0
        while np.any(hi_t - lo_t >= tol):
            mid = 0.5 * (lo_t + hi_t)
            same = (f(rows, mid) >= 0) == s_lo
            lo_t = np.where(same, mid, lo_t)
            hi_t = np.where(same, hi_t, mid)
        t_hit[rows] = 0.5 * (lo_t + hi_t)
    return t_hit, ~np.isnan(t_hit)


def intersect_ray_surface(ray: Ray3, surface) -> Optional[np.ndarray]:
    """First intersection of a single ray with a heightfield surface, or ``None``."""
    t, hit = intersect_rays_heightfield(ray.origin, ray.direction[None, :], surface)
    if not hit[0]:
        return None
    return ray.at(t[0])


def intersect_rays_cylinder(origins, dirs, tip, axis_dir, radius, length):
    """Closed finite cylinder from ``tip`` back to ``tip - length * axis_dir``.

    Returns ``(t, s)`` where ``t`` is the nearest positive ray parameter (``inf``
    on a miss) and ``s`` the signed axial coordinate of the hit measured from the
    tip along ``axis_dir`` (so ``s`` lies in ``[-length, 0]``).
    """
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    origins = np.broadcast_to(np.asarray(origins, dtype=float), dirs.shape)
    a = np.asarray(axis_dir, dtype=float)
    w = origins - np.asarray(tip, dtype=float)
    wa = w @ a
    da = dirs @ a
    w_perp = w - wa[:, None] * a
    d_perp = dirs - da[:, None] * a
    A = np.sum(d_perp * d_perp, axis=1)
    B = 2.0 * np.sum(w_perp * d_perp, axis=1)
    C = np.sum(w_perp * w_perp, axis=1) - radius * radius

    best = np.full(dirs.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = B * B - 4 * A * C
        ok = (disc >= 0) & (A > 1e-300)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        for sign in (-1.0, 1.0):
            t = (-B + sign * sq) / (2 * A)
            s = wa + t * da
            good = ok & (t > 0) & (s >= -length) & (s <= 0)
            best = np.where(good & (t < best), t, best)
        for s_cap in (0.0, -length):
            t = (s_cap - wa) / da
            p_perp = w_perp + t[:, None] * d_perp
            good = (da != 0) & (t > 0) & (np.sum(p_perp * p_perp, axis=1) <= radius * radius)
            best = np.where(good & (t < best), t, best)
    s_hit = np.where(np.isfinite(best), wa + np.where(np.isfinite(best), best, 0.0) * da, np.nan)
    return best, s_hit


# ---------------------------------------------------------------------------
# scene casting


@dataclass
class CastResult:
    """Per-pixel ray-cast output for one camera, arrays shaped ``(H, W, ...)``."""

    label: np.ndarray  # HIT_* codes
    points: np.ndarray  # (H, W, 3) left-frame hit points, nan on miss
    depth: np.ndarray  # (H, W) z-depth, INVALID_DEPTH on miss
    normals: np.ndarray  # (H, W, 3) unit normals facing the camera, 0 on miss
    directions: np.ndarray  # (H, W, 3) unit viewing directions


def pixel_grid(rig: StereoRig) -> np.ndarray:
    v, u = np.mgrid[0 : rig.height, 0 : rig.width]
    return np.stack([u, v], axis=-1).astype(np.float64)


def cast_scene(scene, which: Side = "left", include_probe: bool = True) -> CastResult:
    """Ray-cast every pixel of one camera against the surface and the probe.

    ``scene`` needs ``rig``, ``surface`` (heightfield or object exposing
    ``heightfield``) and ``probe`` (``tip``, ``axis_dir``, ``radius``,
    ``visible_length``, ``cap_length``) attributes.
    """
    rig = scene.rig
    origin, dirs = pixel_rays(pixel_grid(rig), rig, which)
    shape = dirs.shape[:2]
    flat_dirs = dirs.reshape(-1, 3)
    hf = _as_heightfield(scene.surface)

    t_surf, hit_surf = intersect_rays_heightfield(origin, flat_dirs, hf)
    t_surf = np.where(hit_surf, t_surf, np.inf)

    label = np.where(hit_surf, HIT_SURFACE, HIT_NONE)
    t_best = t_surf
    normals = np.zeros_like(flat_dirs)
    if include_probe and scene.probe is not None:
        probe = scene.probe
        t_probe, s_probe = intersect_rays_cylinder(
            origin, flat_dirs, probe.tip, probe.axis_dir, probe.radius, probe.visible_length
        )
        use_probe = t_probe < t_surf
        tip_cap = use_probe & (s_probe >= -probe.cap_length)
        label = np.where(use_probe, np.where(tip_cap, HIT_TIP_CAP, HIT_PROBE), label)
        t_best = np.where(use_probe, t_probe, t_surf)

    hit = np.isfinite(t_best)
    points = np.full_like(flat_dirs, np.nan)
    points[hit] = origin + t_best[hit, None] * flat_dirs[hit]

    surf_rows = label == HIT_SURFACE
    if np.any(surf_rows):
        normals[surf_rows] = hf.normal(points[surf_rows, 0], points[surf_rows, 1])
    probe_rows = (label == HIT_PROBE) | (label == HIT_TIP_CAP)
    if np.any(probe_rows):
        a = np.asarray(scene.probe.axis_dir, dtype=float)
        rel = points[probe_rows] - scene.probe.tip
        radial = rel - (rel @ a)[:, None] * a
        rn = np.linalg.norm(radial, axis=1)
        on_cap = rn < 0.999 * scene.probe.radius
        n = np.where(on_cap[:, None], a, radial / np.maximum(rn, 1e-12)[:, None])
        # face the viewer
        flip = np.sum(n * flat_dirs[probe_rows], axis=1) > 0
        normals[probe_rows] = np.where(flip[:, None], -n, n)

    depth = np.where(hit, points[:, 2], INVALID_DEPTH)
    return CastResult(
        label=label.reshape(shape),
        points=points.reshape(shape + (3,)),
        depth=depth.reshape(shape),
        normals=normals.reshape(shape + (3,)),
        directions=dirs,
    )


def render_depth(scene, which: Side = "left", invalid_fraction: float = 0.0, seed=0,
                 include_probe: bool = True) -> DepthMap:
    """Analytic depth map with a seeded fraction of pixels knocked out.

    Exactly ``floor(invalid_fraction * W * H)`` pixels are chosen (without
    replacement) and set to ``INVALID_DEPTH``; rays that miss everything are
    invalid as well.
    """
    if not 0.0 <= invalid_fraction <= 1.0:
        raise GeometryError("invalid_fraction must lie in [0, 1]")
    cast = cast_scene(scene, which, include_probe=include_probe)
    return DepthMap(knock_out_depth(cast.depth, invalid_fraction, seed))


def knock_out_depth(values: np.ndarray, fraction: float, seed) -> np.ndarray:
    """Copy of ``values`` with ``floor(fraction * size)`` seeded pixels invalidated."""
    values = values.copy()
    n_drop = int(np.floor(fraction * values.size))
    if n_drop:
        drop = np.random.default_rng(seed).choice(values.size, size=n_drop, replace=False)
        values.reshape(-1)[drop] = INVALID_DEPTH
    return values
