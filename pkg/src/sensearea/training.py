"""Training loop, checkpoints and inference for the dual-branch regressor."""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import axis as axis_mod
from .model import ModelConfig, ModelParams, forward, init_params, loss_and_grads
from .optim import AdamState, adam_step, lr_schedule

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SACKPT\x00\x01"
CHECKPOINT_VERSION = 1
HISTORY_FIELDS = ("epoch", "lr", "train_loss", "val_mean_px_error")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 12
    epochs: int = 70
    base_lr: float = 1e-3
    breakpoints: tuple = ("3/7", "4/7")
    factors: tuple = (1.0, 0.5, 0.25)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        bps = self.breakpoint_fractions()
        if bps != sorted(bps) or any(not 0 < b <= 1 for b in bps):
            raise ValueError("breakpoints must be ascending within (0, 1]")

    def breakpoint_fractions(self) -> list:
        return [Fraction(b) for b in self.breakpoints]

    def lr(self, epoch: int) -> float:
        return lr_schedule(epoch, self.epochs, self.base_lr, self.breakpoint_fractions(), self.factors)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


# ---------------------------------------------------------------------------
# inputs


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an 8-bit RGB image to ``size x size``, scaled to [0, 1]."""
    im = Image.fromarray(np.asarray(image, dtype=np.uint8)).resize((size, size), Image.BILINEAR)
    return np.asarray(im, dtype=np.float64) / 255.0


def sample_points(sample, side: str, n_points: int) -> np.ndarray:
    """Normalized principal points for one view (stored copy if the sample has one)."""
    pts = sample.extras.get(f"principal_points_{side}")
    if pts is None or len(pts) != n_points:
        pts = axis_mod.probe_points(sample.probe_mask(side), n_points).points
    return np.asarray(pts, dtype=np.float64) / np.array([sample.width, sample.height], dtype=np.float64)


def sample_inputs(sample, config: ModelConfig):
    sides = ("left", "right")[: config.n_views]
    img = np.concatenate([resize_image(sample.images[s]["standard"], config.image_size) for s in sides], axis=-1)
    pts = np.concatenate([sample_points(sample, s, config.n_points) for s in sides], axis=0)
    return img, pts


@dataclass
class ArrayData:
    images: np.ndarray  # (N, S, S, C) in [0, 1]
    points: np.ndarray  # (N, P, 2) normalized
    targets: np.ndarray  # (N, 2) normalized left-image gt
    sizes: np.ndarray  # (N, 2) original (width, height)
    ids: list = field(default_factory=list)

    def __len__(self):
        return self.images.shape[0]

    def target_pixels(self) -> np.ndarray:
        return self.targets * self.sizes


def prepare_arrays(samples: Sequence, config: ModelConfig) -> ArrayData:
    samples = list(samples)
    if not samples:
        raise ValueError("empty split")
    imgs, pts, tgts, sizes, ids = [], [], [], [], []
    for s in samples:
        img, p = sample_inputs(s, config)
        imgs.append(img)
        pts.append(p)
        size = np.array([s.width, s.height], dtype=np.float64)
        tgts.append(np.asarray(s.gt_px_left, dtype=np.float64) / size)
        sizes.append(size)
        ids.append(s.sample_id)
    dtype = np.dtype(config.dtype)
    return ArrayData(np.stack(imgs).astype(dtype), np.stack(pts).astype(dtype),
                     np.stack(tgts), np.stack(sizes), ids)


def predict_arrays(params: ModelParams, images, points, config: ModelConfig, batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, images.shape[0], batch_size):
        pred, _ = forward(params, images[i : i + batch_size], points[i : i + batch_size], config)
        out.append(pred)
    return np.concatenate(out, axis=0).astype(np.float64)


def mean_pixel_error(params, data: ArrayData, config: ModelConfig) -> float:
    pred = predict_arrays(params, data.images, data.points, config) * data.sizes
    return float(np.mean(np.linalg.norm(pred - data.target_pixels(), axis=1)))


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class TrainState:
    params: ModelParams
    best_params: ModelParams
    adam: AdamState
    epoch: int  # number of completed epochs
    history: list
    best_score: float
    best_epoch: int
    model_config: ModelConfig
    train_config: TrainConfig


def save_checkpoint(path, state: TrainState) -> None:
    """Self-describing binary: magic, header length, JSON header, float64 payload."""
    names = state.params.names()
    header = {
        "format": "sensearea-checkpoint",
        "version": CHECKPOINT_VERSION,
        "model_config": state.model_config.to_dict(),
        "train_config": state.train_config.to_dict(),
        "epoch": state.epoch,
        "best_score": state.best_score,
        "best_epoch": state.best_epoch,
        "history": state.history,
        "adam": {"t": state.adam.t, "beta1": state.adam.beta1, "beta2": state.adam.beta2, "eps": state.adam.eps},
        "tensors": [[n, list(state.params[n].shape)] for n in names],
        "blocks": ["params", "best_params", "adam_m", "adam_v"],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(p.flat(), dtype="<f8").tobytes()
        for p in (state.params, state.best_params, state.adam.m, state.adam.v)
    )
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<Q", len(blob)) + blob + payload)


def load_checkpoint(path) -> TrainState:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[len(CHECKPOINT_MAGIC) : len(CHECKPOINT_MAGIC) + 8])
    start = len(CHECKPOINT_MAGIC) + 8
    header = json.loads(raw[start : start + n].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
    payload = np.frombuffer(raw[start + n :], dtype="<f8")
    mc = ModelConfig.from_dict(header["model_config"])
    tc = TrainConfig.from_dict(header["train_config"])
    template = init_params(mc)
    if [[k, list(v.shape)] for k, v in template.items()] != header["tensors"]:
        raise ValueError("checkpoint tensors do not match the model config")
    size = template.size
    if payload.size != 4 * size:
        raise ValueError("truncated checkpoint payload")
    blocks = [template.with_flat(payload[i * size : (i + 1) * size]) for i in range(4)]
    a = header["adam"]
    adam = AdamState(blocks[2], blocks[3], a["t"], a["beta1"], a["beta2"], a["eps"])
    return TrainState(blocks[0], blocks[1], adam, header["epoch"], header["history"],
                      header["best_score"], header["best_epoch"], mc, tc)


def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for row in history:
        w.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                    for k in HISTORY_FIELDS])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# training


def train(train_data, val_data, model_config: ModelConfig, train_config: TrainConfig,
          resume: Optional[TrainState] = None, checkpoint_path=None, stop_after: Optional[int] = None,
          init: Optional[ModelParams] = None) -> TrainState:
    """Minibatch Adam on the MSE loss with the staged learning rate.

    ``train_data``/``val_data`` are :class:`ArrayData` (or sample lists, which
    are converted). Shuffling for epoch ``e`` is drawn from a generator seeded
    with ``(seed, e)``, so resuming from a checkpoint replays the same
    trajectory. The best-validation parameters are kept (best training loss
    when there is no validation split). ``stop_after`` ends the run early after
    that many total epochs, leaving a resumable state.
    """
    if not isinstance(train_data, ArrayData):
        train_data = prepare_arrays(train_data, model_config)
    if val_data is not None and not isinstance(val_data, ArrayData):
        val_data = prepare_arrays(val_data, model_config)
    if len(train_data) == 0:
        raise ValueError("empty training split")
    tc = train_config

    if resume is not None:
        if resume.model_config != model_config or resume.train_config != tc:
            raise ValueError("resume state was produced with a different configuration")
        state = resume
    else:
        params = init if init is not None else init_params(model_config)
        state = TrainState(params, params.copy(), AdamState.zeros(params, tc.beta1, tc.beta2, tc.eps),
                           0, [], float("inf"), -1, model_config, tc)

    n = len(train_data)
    end = tc.epochs if stop_after is None else min(tc.epochs, stop_after)
    for epoch in range(state.epoch, end):
        lr = tc.lr(epoch)
        order = np.random.default_rng([tc.seed, epoch]).permutation(n)
        total = 0.0
        for i in range(0, n, tc.batch_size):
            idx = order[i : i + tc.batch_size]
            loss, grads = loss_and_grads(state.params, train_data.images[idx], train_data.points[idx],
                                         train_data.targets[idx], model_config)
            adam_step(state.params, grads, state.adam, lr)
            total += loss * idx.size
        train_loss = total / n
        val_err = mean_pixel_error(state.params, val_data, model_config) if val_data is not None else None
        score = val_err if val_err is not None else train_loss
        if score < state.best_score:
            state.best_score, state.best_epoch = score, epoch
            state.best_params = state.params.copy()
        state.history.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_mean_px_error": val_err})
        state.epoch = epoch + 1
        logger.info("epoch %d lr %.3g loss %.5f val %s", epoch, lr, train_loss,
                    "-" if val_err is None else f"{val_err:.2f}px")
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, state)
    if not state.params.all_finite():
        raise FloatingPointError("training diverged: non-finite parameters")
    return state


# ---------------------------------------------------------------------------
# inference


def infer(sample, params: ModelParams, config: ModelConfig):
    """Pixel prediction for one sample and the wall-clock forward time in seconds."""
    img, pts = sample_inputs(sample, config)
    dtype = np.dtype(config.dtype)
    t0 = time.perf_counter()
    pred, _ = forward(params, img[None].astype(dtype), pts[None].astype(dtype), config)
    elapsed = time.perf_counter() - t0
    pixel = pred[0].astype(np.float64) * np.array([sample.width, sample.height], dtype=np.float64)
    return pixel, elapsed


def model_predictor(params: ModelParams, config: ModelConfig):
    return lambda sample: infer(sample, params, config)[0]
