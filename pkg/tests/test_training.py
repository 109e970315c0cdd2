import dataclasses

import numpy as np
import pytest

from sensearea import training as tr
from sensearea.evaluation import euclidean_errors
from sensearea.model import ModelConfig

CONFIG = ModelConfig(image_size=32)
QUICK = tr.TrainConfig(epochs=20, batch_size=8, base_lr=2e-3)


@pytest.fixture(scope="module")
def arrays(small_splits):
    return {tag: tr.prepare_arrays(samples, CONFIG) for tag, samples in small_splits.items()}


@pytest.fixture(scope="module")
def quick_run(arrays):
    return tr.train(arrays["train"], arrays["val"], CONFIG, QUICK)


def test_prepared_arrays(arrays, small_splits):
    data = arrays["train"]
    n = len(small_splits["train"])
    assert data.images.shape == (n, 32, 32, 6)
    assert data.points.shape == (n, 100, 2)
    assert data.images.min() >= 0 and data.images.max() <= 1
    np.testing.assert_allclose(data.target_pixels(), [s.gt_px_left for s in small_splits["train"]], atol=1e-12)


def test_empty_split_rejected():
    with pytest.raises(ValueError, match="empty"):
        tr.prepare_arrays([], CONFIG)


def test_training_reduces_loss(quick_run):
    hist = quick_run.history
    assert len(hist) == 20 and quick_run.epoch == 20
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]
    assert quick_run.best_score == min(h["val_mean_px_error"] for h in hist)
    assert [h["lr"] for h in hist[8:10]] == [2e-3, 1e-3]  # 3/7 of 20 epochs lands at epoch 9


def test_training_deterministic(arrays, quick_run):
    again = tr.train(arrays["train"], arrays["val"], CONFIG, dataclasses.replace(QUICK, epochs=20))
    assert again.params.flat().tobytes() == quick_run.params.flat().tobytes()
    assert again.history == quick_run.history


def test_resume_matches_uninterrupted_run(arrays, quick_run, tmp_path):
    ckpt = tmp_path / "run.ckpt"
    partial = tr.train(arrays["train"], arrays["val"], CONFIG, QUICK, checkpoint_path=ckpt, stop_after=7)
    assert partial.epoch == 7
    resumed = tr.train(arrays["train"], arrays["val"], CONFIG, QUICK, resume=tr.load_checkpoint(ckpt))
    assert resumed.params.flat().tobytes() == quick_run.params.flat().tobytes()
    assert resumed.best_params.flat().tobytes() == quick_run.best_params.flat().tobytes()
    assert resumed.history == quick_run.history


def test_resume_rejects_other_config(arrays, quick_run):
    with pytest.raises(ValueError, match="different configuration"):
        tr.train(arrays["train"], None, CONFIG, dataclasses.replace(QUICK, base_lr=1e-4), resume=quick_run)


def test_points_branch_alone_beats_mean_baseline(arrays):
    config = ModelConfig(image_size=32, branches=("points",))
    data = arrays  # same inputs; the image branch is simply cut off at the fusion layer
    state = tr.train(data["train"], data["val"], config, tr.TrainConfig(epochs=40, batch_size=8, base_lr=3e-3))
    val = data["val"]
    pred = tr.predict_arrays(state.best_params, val.images, val.points, config) * val.sizes
    baseline = np.mean(arrays["train"].target_pixels(), axis=0)
    model_err = euclidean_errors(pred, val.target_pixels()).mean()
    base_err = euclidean_errors(np.broadcast_to(baseline, pred.shape), val.target_pixels()).mean()
    assert model_err < base_err


def test_checkpoint_round_trip(quick_run, tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    tr.save_checkpoint(a, quick_run)
    loaded = tr.load_checkpoint(a)
    assert loaded.params.flat().tobytes() == quick_run.params.flat().tobytes()
    assert loaded.adam.m.flat().tobytes() == quick_run.adam.m.flat().tobytes()
    assert loaded.adam.t == quick_run.adam.t
    assert loaded.history == quick_run.history
    assert (loaded.model_config, loaded.train_config) == (CONFIG, QUICK)
    tr.save_checkpoint(b, loaded)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path, quick_run):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError, match="not a checkpoint"):
        tr.load_checkpoint(bad)
    good = tmp_path / "good.ckpt"
    tr.save_checkpoint(good, quick_run)
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        tr.load_checkpoint(good)


def test_history_csv(quick_run):
    lines = tr.history_csv(quick_run.history).splitlines()
    assert lines[0] == "epoch,lr,train_loss,val_mean_px_error"
    assert len(lines) == 21
    assert float(lines[1].split(",")[2]) == quick_run.history[0]["train_loss"]


def test_infer_matches_batched_forward(quick_run, arrays, small_splits):
    samples = small_splits["test"]
    data = arrays["test"]
    batched = tr.predict_arrays(quick_run.params, data.images, data.points, CONFIG, batch_size=12) * data.sizes
    for i, s in enumerate(samples):
        px, seconds = tr.infer(s, quick_run.params, CONFIG)
        assert seconds > 0
        np.testing.assert_allclose(px, batched[i], rtol=0, atol=1e-9)


def test_train_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(breakpoints=("4/7", "3/7"))
    assert tr.TrainConfig.from_dict(QUICK.to_dict()) == QUICK
