"""On-disk datasets: PNG files plus a single JSON manifest.

Layout under a dataset root (all manifest paths are relative to it)::

    images/<id>_<side>_<condition>.png   8-bit RGB
    masks/<id>_<side>.png                8-bit, 0 or 255
    depth/<id>_<side>.png                16-bit, round(depth_m * 10000), 0 = invalid
    manifest.json
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from . import axis as axis_mod
from .geometry import DepthMap
from .scene import CONDITIONS, SIDES, Sample, SceneConfig, generate_sample, sample_id

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
DEFAULT_FRACTIONS = (2 / 3, 1 / 6, 1 / 6)
SPLIT_NAMES = ("train", "val", "test")
DEPTH_ENCODING = "uint16 PNG, value = round(depth_m * 10000), 0 = invalid"


class DatasetError(ValueError):
    """Manifest or sample validation failure."""


class DatasetIOError(OSError):
    """Reading or writing a dataset file failed."""


@dataclass
class Manifest:
    scene_config: dict
    entries: list = field(default_factory=list)
    n_points: int = axis_mod.DEFAULT_N_POINTS
    format_version: int = FORMAT_VERSION

    @property
    def config(self) -> SceneConfig:
        return SceneConfig.from_dict(self.scene_config)

    def rig_dict(self) -> dict:
        rig = self.config.rig()
        cam = rig.left
        return {"width": cam.width, "height": cam.height, "fx": cam.fx, "fy": cam.fy,
                "cx": cam.cx, "cy": cam.cy, "baseline": rig.baseline}

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "scene_config": self.scene_config,
            "rig": self.rig_dict(),
            "depth_encoding": DEPTH_ENCODING,
            "n_points": self.n_points,
            "entries": self.entries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, root) -> Path:
        path = Path(root) / MANIFEST_NAME
        try:
            path.write_text(self.to_json(), encoding="utf-8")
        except OSError as e:
            raise DatasetIOError(f"cannot write manifest {path}: {e}") from e
        return path

    @classmethod
    def load(cls, root) -> "Manifest":
        path = Path(root) / MANIFEST_NAME
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise DatasetIOError(f"cannot read manifest {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise DatasetError(f"manifest {path} is not valid JSON: {e}") from e
        if data.get("format_version") != FORMAT_VERSION:
            raise DatasetError(f"unsupported manifest version {data.get('format_version')!r}")
        return cls(data["scene_config"], data["entries"], data["n_points"], data["format_version"])

    def tags(self) -> list:
        return sorted({e.get("split") for e in self.entries if e.get("split")})

    def entries_for(self, tag: str) -> list:
        return [e for e in self.entries if e.get("split") == tag]


# ---------------------------------------------------------------------------
# PNG helpers


def _save_png(path: Path, array) -> None:
    try:
        Image.fromarray(np.ascontiguousarray(array)).save(path, format="PNG")
    except OSError as e:
        raise DatasetIOError(f"cannot write {path}: {e}") from e


def _load_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im)
    except (OSError, FileNotFoundError) as e:
        raise DatasetIOError(f"cannot read {path}: {e}") from e


def save_depth_png(path, depth: DepthMap) -> None:
    _save_png(Path(path), depth.to_uint16())


def load_depth_png(path) -> DepthMap:
    return DepthMap.from_uint16(_load_png(Path(path)).astype(np.uint16))


# ---------------------------------------------------------------------------
# samples


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def sample_files(sid: str, side: str, with_depth: bool) -> dict:
    files = {c: f"images/{sid}_{side}_{c}.png" for c in CONDITIONS}
    files["mask"] = f"masks/{sid}_{side}.png"
    if with_depth:
        files["depth"] = f"depth/{sid}_{side}.png"
    return files


def write_sample(sample: Sample, root, n_points: int = axis_mod.DEFAULT_N_POINTS) -> dict:
    """Write all files for one sample and return its manifest entry."""
    root = Path(root)
    for sub in ("images", "masks", "depth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    sid = sample.sample_id
    with_depth = sample.depth_left is not None
    entry = {
        "id": sid,
        "pose_index": sample.pose_index,
        "stage_index": sample.stage_index,
        "seed": sample.seed,
        "width": sample.width,
        "height": sample.height,
        "gt_3d": _floats(sample.gt_3d),
        "files": {},
    }
    for side in SIDES:
        files = sample_files(sid, side, with_depth)
        for cond in CONDITIONS:
            _save_png(root / files[cond], sample.images[side][cond])
        mask = sample.probe_mask(side)
        _save_png(root / files["mask"], np.where(mask, 255, 0).astype(np.uint8))
        if with_depth:
            save_depth_png(root / files["depth"], getattr(sample, f"depth_{side}"))
        entry["files"][side] = files
        entry[f"gt_px_{side}"] = _floats(sample.gt_px(side))
        tip = getattr(sample, f"tip_px_{side}")
        entry[f"tip_px_{side}"] = None if tip is None else _floats(tip)
        pts = axis_mod.probe_points(mask, n_points).points
        entry[f"principal_points_{side}"] = [_floats(p) for p in pts]
    return entry


def validate_entry(entry: dict, root=None) -> None:
    sid = entry.get("id", "?")
    w, h = entry["width"], entry["height"]
    for side in SIDES:
        u, v = entry[f"gt_px_{side}"]
        if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
            raise DatasetError(f"sample {sid}: gt_px_{side} ({u:.2f}, {v:.2f}) outside the {w}x{h} image")
        pts = entry.get(f"principal_points_{side}")
        if pts is not None and not np.all(np.isfinite(pts)):
            raise DatasetError(f"sample {sid}: non-finite principal points")
        if root is not None:
            for key, rel in entry["files"][side].items():
                if not (Path(root) / rel).is_file():
                    raise DatasetIOError(f"sample {sid}: missing file {rel}")


def read_sample(entry: dict, root, validate: bool = True) -> Sample:
    root = Path(root)
    if validate:
        validate_entry(entry, root)
    images, masks, depths = {}, {}, {}
    for side in SIDES:
        files = entry["files"][side]
        images[side] = {c: _load_png(root / files[c]) for c in CONDITIONS}
        masks[side] = _load_png(root / files["mask"]) > 127
        if "depth" in files:
            depths[side] = load_depth_png(root / files["depth"])
    tip_l, tip_r = entry.get("tip_px_left"), entry.get("tip_px_right")
    sample = Sample(
        images=images,
        gt_3d=np.array(entry["gt_3d"]),
        gt_px_left=np.array(entry["gt_px_left"]),
        gt_px_right=np.array(entry["gt_px_right"]),
        probe_mask_left=masks["left"],
        probe_mask_right=masks["right"],
        pose_index=int(entry["pose_index"]),
        stage_index=int(entry["stage_index"]),
        seed=int(entry["seed"]),
        depth_left=depths.get("left"),
        depth_right=depths.get("right"),
        tip_px_left=None if tip_l is None else np.array(tip_l),
        tip_px_right=None if tip_r is None else np.array(tip_r),
    )
    for side in SIDES:
        pts = entry.get(f"principal_points_{side}")
        if pts is not None:
            sample.extras[f"principal_points_{side}"] = np.array(pts)
    return sample


# ---------------------------------------------------------------------------
# splitting


def _allocate(n: int, fractions: Sequence[float]) -> list:
    """Largest-remainder apportionment of ``n`` items."""
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(manifest: Manifest, fractions=DEFAULT_FRACTIONS, seed: int = 0, names=SPLIT_NAMES) -> Manifest:
    """Tag entries by camera-probe pose so no pose straddles two splits."""
    if len(fractions) != len(names):
        raise DatasetError("need one fraction per split name")
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise DatasetError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    poses = sorted({int(e["pose_index"]) for e in manifest.entries})
    if len(poses) < len(names):
        raise DatasetError(f"{len(poses)} distinct poses cannot fill {len(names)} splits")
    order = np.random.default_rng(seed).permutation(len(poses))
    counts = _allocate(len(poses), fractions)
    tag_of, start = {}, 0
    for name, count in zip(names, counts):
        for k in order[start : start + count]:
            tag_of[poses[k]] = name
        start += count
    entries = [dict(e, split=tag_of[int(e["pose_index"])]) for e in manifest.entries]
    return Manifest(manifest.scene_config, entries, manifest.n_points, manifest.format_version)


def read_split(manifest: Manifest, tag: str, root) -> Iterator[Sample]:
    """Lazily load the samples of one split in id order."""
    if tag not in manifest.tags():
        raise DatasetError(f"unknown split {tag!r}; available: {manifest.tags()}")
    entries = sorted(manifest.entries_for(tag), key=lambda e: e["id"])
    for entry in entries:
        validate_entry(entry, root)
    for entry in entries:
        yield read_sample(entry, root, validate=False)


def generate_dataset(root, n_poses: int, n_stages: int, seed: int = 0,
                     config: Optional[SceneConfig] = None, fractions=DEFAULT_FRACTIONS,
                     split_seed: Optional[int] = None, n_points: int = axis_mod.DEFAULT_N_POINTS) -> Manifest:
    """Render ``n_poses x n_stages`` samples into ``root`` and write a split manifest."""
    config = config or SceneConfig()
    if not 1 <= n_stages <= config.n_stages:
        raise DatasetError(f"n_stages must lie in [1, {config.n_stages}]")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for pose in range(n_poses):
        for stage in range(n_stages):
            try:
                sample = generate_sample(pose, stage, seed, config)
            except Exception as e:
                raise type(e)(f"sample {sample_id(pose, stage)}: {e}") from e
            entries.append(write_sample(sample, root, n_points))
        logger.info("pose %d/%d written", pose + 1, n_poses)
    manifest = Manifest(config.to_dict(), entries, n_points)
    if n_poses >= len(fractions):
        manifest = split(manifest, fractions, seed if split_seed is None else split_seed)
    manifest.save(root)
    return manifest
