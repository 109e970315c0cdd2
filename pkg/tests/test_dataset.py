import hashlib
import json
from collections import Counter

import numpy as np
import pytest

from sensearea import dataset as ds
from sensearea import scene as sc

from conftest import SMALL


def synthetic_manifest(n_poses=120, n_stages=10):
    entries = [{"id": sc.sample_id(p, s), "pose_index": p, "stage_index": s}
               for p in range(n_poses) for s in range(n_stages)]
    return ds.Manifest(SMALL.to_dict(), entries)


def assert_samples_equal(a, b):
    for side in sc.SIDES:
        for cond in sc.CONDITIONS:
            assert a.images[side][cond].tobytes() == b.images[side][cond].tobytes()
        np.testing.assert_array_equal(a.probe_mask(side), b.probe_mask(side))
        np.testing.assert_allclose(a.gt_px(side), b.gt_px(side), atol=1e-6)
    np.testing.assert_allclose(a.gt_3d, b.gt_3d, atol=1e-6)
    np.testing.assert_allclose(a.tip_px_left, b.tip_px_left, atol=1e-6)
    assert (a.pose_index, a.stage_index, a.seed) == (b.pose_index, b.stage_index, b.seed)


# ---------------------------------------------------------------------------
# write / read


def test_round_trip(tmp_path, small_dataset):
    sample = sc.generate_sample(1, 2, 0, SMALL)
    entry = ds.write_sample(sample, tmp_path)
    assert_samples_equal(ds.read_sample(entry, tmp_path), sample)


def test_round_trip_with_depth(small_dataset):
    root, manifest = small_dataset
    entry = manifest.entries[5]
    loaded = ds.read_sample(entry, root)
    from dataclasses import replace

    fresh = sc.generate_sample(entry["pose_index"], entry["stage_index"], 0,
                               replace(SMALL, with_depth=True, invalid_depth_fraction=0.1))
    assert_samples_equal(loaded, fresh)
    for got, want in ((loaded.depth_left, fresh.depth_left), (loaded.depth_right, fresh.depth_right)):
        np.testing.assert_array_equal(got.valid, want.valid)
        assert np.max(np.abs(got.values[got.valid] - want.values[want.valid])) <= 0.5e-4 + 1e-12


def test_writes_are_idempotent(tmp_path):
    sample = sc.generate_sample(0, 0, 0, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    ea, eb = ds.write_sample(sample, a), ds.write_sample(sample, b)
    assert ea == eb
    for side in sc.SIDES:
        for rel in ea["files"][side].values():
            assert (a / rel).read_bytes() == (b / rel).read_bytes()
    before = {rel: (a / rel).read_bytes() for side in sc.SIDES for rel in ea["files"][side].values()}
    ds.write_sample(sample, a)
    assert all((a / rel).read_bytes() == data for rel, data in before.items())


def test_manifest_round_trip(small_dataset):
    root, manifest = small_dataset
    loaded = ds.Manifest.load(root)
    assert loaded.to_json() == manifest.to_json()
    assert loaded.config == manifest.config
    assert json.loads((root / ds.MANIFEST_NAME).read_text())["rig"]["fx"] == 100.0


def test_manifest_errors(tmp_path):
    with pytest.raises(ds.DatasetIOError):
        ds.Manifest.load(tmp_path)
    (tmp_path / ds.MANIFEST_NAME).write_text("{not json")
    with pytest.raises(ds.DatasetError, match="not valid JSON"):
        ds.Manifest.load(tmp_path)
    (tmp_path / ds.MANIFEST_NAME).write_text(json.dumps({"format_version": 99}))
    with pytest.raises(ds.DatasetError, match="version"):
        ds.Manifest.load(tmp_path)


# ---------------------------------------------------------------------------
# splits


def test_split_counts_at_full_scale():
    tagged = ds.split(synthetic_manifest())
    counts = Counter(e["split"] for e in tagged.entries)
    assert counts == {"train": 800, "val": 200, "test": 200}


def test_split_deterministic_in_seed():
    a = ds.split(synthetic_manifest(), seed=3)
    b = ds.split(synthetic_manifest(), seed=3)
    c = ds.split(synthetic_manifest(), seed=4)
    assert [e["split"] for e in a.entries] == [e["split"] for e in b.entries]
    assert [e["split"] for e in a.entries] != [e["split"] for e in c.entries]


@pytest.mark.parametrize("seed", range(5))
def test_split_is_a_pose_level_partition(seed):
    m = synthetic_manifest(n_poses=37, n_stages=3)
    tagged = ds.split(m, seed=seed)
    assert len(tagged.entries) == len(m.entries)
    tags_by_pose = {}
    for e in tagged.entries:
        tags_by_pose.setdefault(e["pose_index"], set()).add(e["split"])
    assert all(len(t) == 1 for t in tags_by_pose.values())
    assert set(tagged.tags()) == set(ds.SPLIT_NAMES)
    assert "split" not in m.entries[0]  # the input manifest is untouched


def test_split_errors():
    with pytest.raises(ds.DatasetError, match="distinct poses"):
        ds.split(synthetic_manifest(n_poses=2))
    with pytest.raises(ds.DatasetError, match="sum to 1"):
        ds.split(synthetic_manifest(), fractions=(0.5, 0.2, 0.2))
    with pytest.raises(ds.DatasetError):
        ds.split(synthetic_manifest(), fractions=(0.5, 0.5))


def test_allocate_largest_remainder():
    assert ds._allocate(120, ds.DEFAULT_FRACTIONS) == [80, 20, 20]
    assert ds._allocate(12, ds.DEFAULT_FRACTIONS) == [8, 2, 2]
    assert ds._allocate(9, ds.DEFAULT_FRACTIONS) == [6, 2, 1]  # tied remainders go to the earlier split
    assert sum(ds._allocate(7, (0.3, 0.3, 0.4))) == 7


# ---------------------------------------------------------------------------
# read_split


def test_read_split_order_is_stable(small_dataset):
    root, manifest = small_dataset

    def digest():
        ids = [s.sample_id for s in ds.read_split(ds.Manifest.load(root), "val", root)]
        return hashlib.sha256(",".join(ids).encode()).hexdigest(), ids

    (h1, ids), (h2, _) = digest(), digest()
    assert h1 == h2 and ids == sorted(ids) and len(ids) == 8


def test_corrupted_gt_names_the_sample(small_dataset):
    root, manifest = small_dataset
    bad = ds.Manifest(manifest.scene_config, [dict(e) for e in manifest.entries])
    victim = bad.entries_for("test")[1]
    victim["gt_px_left"] = [500.0, 10.0]
    with pytest.raises(ds.DatasetError, match=victim["id"]):
        list(ds.read_split(bad, "test", root))


def test_missing_file_names_the_sample(small_dataset, tmp_path):
    root, manifest = small_dataset
    entry = manifest.entries_for("train")[0]
    moved = dict(entry, files={side: dict(f) for side, f in entry["files"].items()})
    moved["files"]["right"]["standard"] = "images/gone.png"
    with pytest.raises(ds.DatasetIOError, match=entry["id"]):
        list(ds.read_split(ds.Manifest(manifest.scene_config, [moved]), "train", root))
    assert isinstance(ds.DatasetIOError("x"), OSError)


def test_unknown_split(small_dataset):
    root, manifest = small_dataset
    with pytest.raises(ds.DatasetError, match="unknown split"):
        next(ds.read_split(manifest, "holdout", root))


def test_depth_png_encoding(small_dataset):
    root, manifest = small_dataset
    entry = manifest.entries[0]
    from PIL import Image

    raw = np.asarray(Image.open(root / entry["files"]["left"]["depth"]))
    assert raw.dtype == np.uint16
    depth = ds.load_depth_png(root / entry["files"]["left"]["depth"])
    np.testing.assert_array_equal(raw == 0, ~depth.valid)
    np.testing.assert_allclose(depth.values[depth.valid], raw[raw > 0] / 1e4)


def test_generate_rejects_bad_stage_count(tmp_path):
    with pytest.raises(ds.DatasetError):
        ds.generate_dataset(tmp_path, n_poses=3, n_stages=11, config=SMALL)


@pytest.mark.slow
def test_full_scale_generation(tmp_path):
    # 120 poses x 10 stages; the resolution is reduced so the run takes minutes, not an hour
    config = sc.SceneConfig(width=80, height=60, focal=50.0)
    manifest = ds.generate_dataset(tmp_path, n_poses=120, n_stages=10, seed=0, config=config)
    assert len(manifest.entries) == 1200
    for e in manifest.entries:
        ds.validate_entry(e, tmp_path)
    assert sum(1 for _ in ds.read_split(ds.Manifest.load(tmp_path), "train", tmp_path)) == 800
