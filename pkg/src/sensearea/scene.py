"""Synthetic acquisition rig: phantom heightfields, probe poses and image triples.

A scene is fully determined by ``(pose_index, stage_index, seed, config)``.
Each camera-probe pose gets its own procedural phantom; the rotation stage
turns that phantom about its center in 36 degree steps, so one pose yields ten
surface profiles seen from a fixed camera and probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import geometry as geo
from .geometry import DepthMap, Heightfield, Ray3, StereoRig

SIDES = ("left", "right")
CONDITIONS = ("standard", "laser_on_dark", "laser_off_dark")


class SceneError(RuntimeError):
    """Raised when a valid scene cannot be produced."""


@dataclass(frozen=True)
class SceneConfig:
    """Generation parameters. Frozen so it can key caches and be fingerprinted."""

    # camera
    width: int = 640
    height: int = 480
    focal: float = 400.0
    baseline: float = 0.005
    # phantom
    extent: tuple[float, float] = (0.30, 0.21)
    grid_cells: tuple[int, int] = (64, 64)
    base_depth: float = 0.18
    n_bumps: tuple[int, int] = (2, 6)
    bump_sigma: tuple[float, float] = (0.015, 0.05)
    bump_amplitude: tuple[float, float] = (0.01, 0.04)
    max_height: float = 0.08
    albedo_waves: int = 6
    # rotation stage
    n_stages: int = 10
    stage_step_deg: float = 36.0
    # probe
    probe_radius: float = 0.0025  # a 5 mm instrument
    probe_length: float = 0.25
    probe_cap_length: float = 0.003
    tip_depth: tuple[float, float] = (0.08, 0.13)
    probe_tilt_deg: tuple[float, float] = (30.0, 60.0)
    tip_region: float = 0.6  # tip lands in the central fraction of the left image
    min_elongation: float = 8.0  # required eigenvalue ratio of the probe silhouette
    max_tries: int = 100
    # illumination / sensor
    spot_sigma_px: float = 3.0
    spot_peak: float = 1.5  # >1 saturates the red channel at the spot center
    dark_level: int = 2
    dark_noise: int = 4
    ambient_floor: int = 12
    standard_noise: float = 1.5
    # depth maps, for datasets that carry them
    with_depth: bool = False
    invalid_depth_fraction: float = 0.0

    def rig(self) -> StereoRig:
        return geo.make_rig(self.width, self.height, self.focal, self.baseline)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})


DEFAULT_CONFIG = SceneConfig()


@dataclass(frozen=True)
class TissueSurface:
    heightfield: Heightfield
    albedo: np.ndarray  # (ny, nx, 3) per-cell RGB in [0, 1]
    bumps: np.ndarray  # (K, 4): center x, center y, sigma, amplitude (phantom frame)
    base_depth: float
    rotation_deg: float = 0.0

    def height(self, x, y):
        return self.heightfield.height(x, y)

    def albedo_at(self, x, y) -> np.ndarray:
        hf = self.heightfield
        ix = np.clip(np.floor((np.asarray(x) - hf.x0) / hf.dx).astype(np.intp), 0, hf.nx - 1)
        iy = np.clip(np.floor((np.asarray(y) - hf.y0) / hf.dy).astype(np.intp), 0, hf.ny - 1)
        return self.albedo[iy, ix]


@dataclass(frozen=True)
class ProbePose:
    tip: np.ndarray
    axis_dir: np.ndarray  # unit, from the tip toward the tissue
    radius: float
    visible_length: float
    cap_length: float = 0.003

    @property
    def axis_ray(self) -> Ray3:
        return Ray3(self.tip, self.axis_dir)


@dataclass(frozen=True)
class Scene:
    surface: TissueSurface
    probe: ProbePose
    rig: StereoRig
    stage_index: int
    pose_index: int
    seed: int
    config: SceneConfig = DEFAULT_CONFIG


@dataclass
class Sample:
    images: dict  # side -> condition -> (H, W, 3) uint8
    gt_3d: np.ndarray
    gt_px_left: np.ndarray
    gt_px_right: np.ndarray
    probe_mask_left: np.ndarray
    probe_mask_right: np.ndarray
    pose_index: int
    stage_index: int
    seed: int
    depth_left: Optional[DepthMap] = None
    depth_right: Optional[DepthMap] = None
    tip_px_left: Optional[np.ndarray] = None
    tip_px_right: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def sample_id(self) -> str:
        return sample_id(self.pose_index, self.stage_index)

    def probe_mask(self, side: str) -> np.ndarray:
        return self.probe_mask_left if side == "left" else self.probe_mask_right

    def gt_px(self, side: str) -> np.ndarray:
        return self.gt_px_left if side == "left" else self.gt_px_right

    @property
    def width(self) -> int:
        return self.probe_mask_left.shape[1]

    @property
    def height(self) -> int:
        return self.probe_mask_left.shape[0]


def sample_id(pose_index: int, stage_index: int) -> str:
    return f"p{pose_index:04d}_s{stage_index:02d}"


# ---------------------------------------------------------------------------
# phantom


def _rotate(x, y, angle_rad):
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return c * x - s * y, s * x + c * y


def _albedo_field(rng, n_waves, x, y):
    """Low-frequency tissue-red texture evaluated at phantom-frame points."""
    freqs = rng.uniform(40.0, 160.0, size=n_waves)
    angles = rng.uniform(0, 2 * np.pi, size=n_waves)
    phases = rng.uniform(0, 2 * np.pi, size=n_waves)
    weights = rng.uniform(0.5, 1.0, size=n_waves)
    mix = rng.uniform(-1, 1, size=(n_waves, 3))
    base = np.array([0.78, 0.36, 0.32])
    field_ = np.zeros(np.shape(x) + (3,))
    for f, a, p, w, m in zip(freqs, angles, phases, weights, mix):
        wave = np.cos(f * (np.cos(a) * x + np.sin(a) * y) + p) * w / n_waves
        field_ += wave[..., None] * (0.6 + 0.25 * m)
    return np.clip(base * (1.0 + field_), 0.05, 1.0)


def make_surface(seed, config: SceneConfig = DEFAULT_CONFIG, rotation_deg: float = 0.0) -> TissueSurface:
    """Procedural phantom: base plane plus Gaussian bumps, turned by ``rotation_deg``.

    Bump amplitudes are rescaled so their sum never exceeds ``max_height``,
    which bounds every height to ``[base, base + max_height]`` at any rotation.
    """
    rng = np.random.default_rng(seed)
    k = int(rng.integers(config.n_bumps[0], config.n_bumps[1] + 1))
    wx, wy = config.extent
    bumps = np.column_stack(
        [
            rng.uniform(-wx / 2, wx / 2, size=k),
            rng.uniform(-wy / 2, wy / 2, size=k),
            rng.uniform(*config.bump_sigma, size=k),
            rng.uniform(*config.bump_amplitude, size=k),
        ]
    )
    total = bumps[:, 3].sum()
    if total > config.max_height:
        bumps[:, 3] *= config.max_height / total

    nx, ny = config.grid_cells
    if nx < 64 or ny < 64:
        raise SceneError("heightfield needs at least 64x64 cells")
    xs = np.linspace(-wx / 2, wx / 2, nx + 1)
    ys = np.linspace(-wy / 2, wy / 2, ny + 1)
    # make the grid exactly point-symmetric so half-turns map nodes onto nodes
    xs = 0.5 * (xs - xs[::-1])
    ys = 0.5 * (ys - ys[::-1])
    gx, gy = np.meshgrid(xs, ys)
    angle = math.radians(rotation_deg)
    px, py = _rotate(gx, gy, -angle)  # world node -> phantom frame
    heights = np.full(gx.shape, config.base_depth)
    for cx, cy, sigma, amp in bumps:
        heights += amp * np.exp(-((px - cx) ** 2 + (py - cy) ** 2) / (2 * sigma * sigma))

    cx_ = 0.5 * (xs[:-1] + xs[1:])
    cy_ = 0.5 * (ys[:-1] + ys[1:])
    cgx, cgy = np.meshgrid(cx_, cy_)
    cpx, cpy = _rotate(cgx, cgy, -angle)
    albedo = _albedo_field(rng, config.albedo_waves, cpx, cpy)

    hf = Heightfield(-wx / 2, wx / 2, -wy / 2, wy / 2, heights)
    return TissueSurface(hf, albedo, bumps, config.base_depth, rotation_deg)


def flat_surface(depth: float, extent=(0.30, 0.21), cells=(64, 64)) -> TissueSurface:
    """Zero-amplitude phantom at constant depth."""
    wx, wy = extent
    heights = np.full((cells[1] + 1, cells[0] + 1), float(depth))
    hf = Heightfield(-wx / 2, wx / 2, -wy / 2, wy / 2, heights)
    albedo = np.full((cells[1], cells[0], 3), 0.7)
    return TissueSurface(hf, albedo, np.zeros((0, 4)), float(depth))


# ---------------------------------------------------------------------------
# probe poses


def _surface_seed(seed: int, pose_index: int):
    return np.random.SeedSequence([seed, pose_index, 0])


@lru_cache(maxsize=256)
def _stage_surface(seed: int, pose_index: int, stage_index: int, config: SceneConfig) -> TissueSurface:
    return make_surface(_surface_seed(seed, pose_index), config, stage_index * config.stage_step_deg)


def _spot_margin(config: SceneConfig) -> float:
    return math.ceil(3 * config.spot_sigma_px) + 1.0


def _inside(px, rig: StereoRig, margin: float = 0.0) -> bool:
    u, v = px
    return margin <= u <= rig.width - 1 - margin and margin <= v <= rig.height - 1 - margin


def _probe_silhouette(probe: ProbePose, rig: StereoRig, which) -> np.ndarray:
    origin, dirs = geo.pixel_rays(geo.pixel_grid(rig), rig, which)
    t, _ = geo.intersect_rays_cylinder(
        origin, dirs.reshape(-1, 3), probe.tip, probe.axis_dir, probe.radius, probe.visible_length
    )
    return np.isfinite(t).reshape(rig.height, rig.width)


def _silhouette_ok(probe: ProbePose, rig: StereoRig, which, config: SceneConfig) -> bool:
    """Probe touches the image border and looks elongated, not end-on.

    Checked on a probe-only render at no more than 160 px width.
    """
    k = max(1, int(math.ceil(rig.width / 160)))
    small = geo.make_rig(rig.width // k, rig.height // k, rig.left.fx / k, rig.baseline)
    mask = _probe_silhouette(probe, small, which)
    if mask.sum() < 2:
        return False
    if not (mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any()):
        return False
    rows, cols = np.nonzero(mask)
    cov = np.cov(np.stack([cols, rows]).astype(float), bias=True)
    lam = np.linalg.eigvalsh(cov)
    return bool(lam[1] >= config.min_elongation * max(lam[0], 1e-12))


def _occluded_by_probe(point, probe: ProbePose, rig: StereoRig, which) -> bool:
    origin = rig.center(which)
    d = point - origin
    dist = np.linalg.norm(d)
    t, _ = geo.intersect_rays_cylinder(
        origin, (d / dist)[None, :], probe.tip, probe.axis_dir, probe.radius, probe.visible_length
    )
    return bool(t[0] < dist)


def _pose_is_valid(probe: ProbePose, surfaces, rig: StereoRig, config: SceneConfig) -> bool:
    margin = _spot_margin(config)
    for which in ("left", "right"):
        tip_px = geo.project(probe.tip, rig, which)
        if not _inside(tip_px, rig):
            return False
        if not _silhouette_ok(probe, rig, which, config):
            return False
    for surface in surfaces:
        hit = geo.intersect_ray_surface(probe.axis_ray, surface)
        if hit is None:
            return False
        for which in ("left", "right"):
            if not _inside(geo.project(hit, rig, which), rig, margin):
                return False
            if _occluded_by_probe(hit, probe, rig, which):
                return False
    return True


def _draw_probe(rng, rig: StereoRig, config: SceneConfig) -> ProbePose:
    f = config.tip_region
    u = rng.uniform((1 - f) / 2 * rig.width, (1 + f) / 2 * rig.width)
    v = rng.uniform((1 - f) / 2 * rig.height, (1 + f) / 2 * rig.height)
    depth = rng.uniform(*config.tip_depth)
    tip = geo.backproject(np.array([u, v]), depth, rig, "left")
    tilt = math.radians(rng.uniform(*config.probe_tilt_deg))
    azimuth = rng.uniform(0, 2 * np.pi)
    axis_dir = np.array(
        [math.sin(tilt) * math.cos(azimuth), math.sin(tilt) * math.sin(azimuth), math.cos(tilt)]
    )
    axis_dir /= np.linalg.norm(axis_dir)
    return ProbePose(tip, axis_dir, config.probe_radius, config.probe_length, config.probe_cap_length)


@lru_cache(maxsize=256)
def probe_pose_for(seed: int, pose_index: int, config: SceneConfig = DEFAULT_CONFIG) -> ProbePose:
    """Probe pose shared by all stages of one camera-probe pose.

    Rejection-samples until the axis hits every stage surface at a pixel that
    is visible (inside both frames and not hidden by the probe), the tip falls
    in the central image region, and the probe silhouette is elongated and
    runs off an image border.
    """
    rig = config.rig()
    surfaces = [_stage_surface(seed, pose_index, s, config) for s in range(config.n_stages)]
    rng = np.random.default_rng(np.random.SeedSequence([seed, pose_index, 1]))
    for _ in range(config.max_tries):
        probe = _draw_probe(rng, rig, config)
        if _pose_is_valid(probe, surfaces, rig, config):
            return probe
    raise SceneError(
        f"no valid probe pose for pose_index={pose_index} seed={seed} after {config.max_tries} tries"
    )


def sample_scene(pose_index: int, stage_index: int, seed: int, config: SceneConfig = DEFAULT_CONFIG) -> Scene:
    if not 0 <= stage_index < config.n_stages:
        raise SceneError(f"stage_index must lie in [0, {config.n_stages})")
    surface = _stage_surface(int(seed), int(pose_index), int(stage_index), config)
    probe = probe_pose_for(int(seed), int(pose_index), config)
    return Scene(surface, probe, config.rig(), int(stage_index), int(pose_index), int(seed), config)


# ---------------------------------------------------------------------------
# rendering


def axis_surface_point(scene: Scene) -> np.ndarray:
    hit = geo.intersect_ray_surface(scene.probe.axis_ray, scene.surface)
    if hit is None:
        raise SceneError("probe axis misses the surface")
    return hit


def geometric_oracle(scene: Scene, which="left") -> np.ndarray:
    """Projected axis-surface intersection computed from perfect pose knowledge."""
    return geo.project(axis_surface_point(scene), scene.rig, which)


def _to_uint8(img) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _shade_standard(scene: Scene, cast: geo.CastResult, rng) -> np.ndarray:
    label = cast.label
    img = np.zeros(label.shape + (3,))
    img[:] = (0.08, 0.05, 0.05)
    lambert = np.clip(-np.sum(cast.normals * cast.directions, axis=-1), 0.0, 1.0)
    shade = 0.2 + 0.8 * lambert

    surf = label == geo.HIT_SURFACE
    if np.any(surf):
        pts = cast.points[surf]
        img[surf] = scene.surface.albedo_at(pts[:, 0], pts[:, 1]) * shade[surf, None]
    body = label == geo.HIT_PROBE
    img[body] = 0.72 * shade[body, None]
    cap = label == geo.HIT_TIP_CAP
    img[cap] = 0.22 * shade[cap, None]
    img = img * 255.0 + rng.normal(0.0, scene.config.standard_noise, size=img.shape)
    return _to_uint8(img)


def _dark_frame(shape, rng, config: SceneConfig) -> np.ndarray:
    noise = rng.integers(0, config.dark_noise + 1, size=shape + (3,))
    return (config.dark_level + noise).astype(np.float64)


def _laser_spot(shape, center, config: SceneConfig) -> np.ndarray:
    v, u = np.mgrid[0 : shape[0], 0 : shape[1]]
    r2 = (u - center[0]) ** 2 + (v - center[1]) ** 2
    return 255.0 * config.spot_peak * np.exp(-r2 / (2 * config.spot_sigma_px ** 2))


def render_views(scene: Scene) -> Sample:
    """Ray-cast both cameras and synthesize the three illumination conditions."""
    config = scene.config
    rig = scene.rig
    gt_3d = axis_surface_point(scene)
    noise_seed = np.random.SeedSequence([scene.seed, scene.pose_index, scene.stage_index, 7])
    rng = np.random.default_rng(noise_seed)
    shape = (rig.height, rig.width)

    images, masks, tips, depths, gts = {}, {}, {}, {}, {}
    for k, side in enumerate(SIDES):
        cast = geo.cast_scene(scene, side)
        gt_px = geo.project(gt_3d, rig, side)
        gts[side] = gt_px

        standard = _shade_standard(scene, cast, rng)
        off = _dark_frame(shape, rng, config)
        on = _dark_frame(shape, rng, config)
        on[..., 0] += _laser_spot(shape, gt_px, config)
        images[side] = {
            "standard": standard,
            "laser_on_dark": _to_uint8(on),
            "laser_off_dark": _to_uint8(off),
        }

        label = cast.label
        masks[side] = (label == geo.HIT_PROBE) | (label == geo.HIT_TIP_CAP)
        cap_rows, cap_cols = np.nonzero(label == geo.HIT_TIP_CAP)
        tips[side] = (
            np.array([cap_cols.mean(), cap_rows.mean()]) if cap_rows.size else geo.project(scene.probe.tip, rig, side)
        )
        if config.with_depth:
            depth_seed = np.random.SeedSequence([scene.seed, scene.pose_index, scene.stage_index, 11 + k])
            depths[side] = DepthMap(geo.knock_out_depth(cast.depth, config.invalid_depth_fraction, depth_seed))

    return Sample(
        images=images,
        gt_3d=gt_3d,
        gt_px_left=gts["left"],
        gt_px_right=gts["right"],
        probe_mask_left=masks["left"],
        probe_mask_right=masks["right"],
        pose_index=scene.pose_index,
        stage_index=scene.stage_index,
        seed=scene.seed,
        depth_left=depths.get("left"),
        depth_right=depths.get("right"),
        tip_px_left=tips["left"],
        tip_px_right=tips["right"],
    )


def generate_sample(pose_index: int, stage_index: int, seed: int, config: SceneConfig = DEFAULT_CONFIG) -> Sample:
    return render_views(sample_scene(pose_index, stage_index, seed, config))
