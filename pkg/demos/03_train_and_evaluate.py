"""
Train a small model and score it
================================

Generate a few hundred samples, train the dual-branch regressor for a handful
of epochs, and compare it with simple baselines on the held-out poses. The
full acceptance run uses 480 samples, 128 px inputs and 30 epochs; the numbers
below are scaled down so the demo finishes in about a minute.
"""

import sys
import tempfile
from dataclasses import replace

import numpy as np

from sensearea import dataset as ds
from sensearea import evaluation as ev
from sensearea import scene as sc
from sensearea import training as tr
from sensearea.model import ModelConfig

root = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="sensearea_demo_")
config = replace(sc.SceneConfig(width=160, height=120, focal=100.0), with_depth=True, invalid_depth_fraction=0.1)

# Splits are drawn per camera-probe pose, so no pose leaks across them.
manifest = ds.generate_dataset(root, n_poses=48, n_stages=4, seed=0, config=config)
splits = {tag: list(ds.read_split(manifest, tag, root)) for tag in ("train", "val", "test")}
print({tag: len(s) for tag, s in splits.items()})

model_config = ModelConfig(image_size=48)
arrays = {tag: tr.prepare_arrays(s, model_config) for tag, s in splits.items()}
state = tr.train(arrays["train"], arrays["val"], model_config, tr.TrainConfig(epochs=15, batch_size=12))
for row in state.history[::5]:
    print(f"epoch {row['epoch']:2d}  lr {row['lr']:.1e}  loss {row['train_loss']:.4f}  "
          f"val {row['val_mean_px_error']:.1f} px")

# Same evaluation for every predictor; 3D errors use the depth maps.
train_gts = np.array([s.gt_px_left for s in splits["train"]])
options = ev.EvalOptions(rig=config.rig())
reports = [
    ev.evaluate(tr.model_predictor(state.best_params, model_config), splits["test"], replace(options, name="model")),
    ev.evaluate(ev.mean_baseline(train_gts), splits["test"], replace(options, name="mean")),
    ev.evaluate(ev.constant_predictor([79.5, 59.5]), splits["test"], replace(options, name="center")),
]
print(ev.render_report(reports))
