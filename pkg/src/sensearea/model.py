"""Dual-branch intersection regressor with hand-written reverse mode.

Image branch: five stride-2 3x3 convolutions with ReLU, then global average
pooling. Points branch: an MLP over the flattened principal-point
coordinates. The two feature vectors are concatenated and a two-layer head
regresses the normalized ``(u, v)`` through a sigmoid.

Tensors are NHWC. Inputs are expected in ``[0, 1]``; both are shifted by -0.5
inside the network.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass(frozen=True)
class ModelConfig:
    input_mode: str = "stereo"  # "stereo" or "mono"
    image_size: int = 128
    n_points: int = 50
    conv_channels: tuple = (8, 16, 32, 64, 64)
    points_widths: tuple = (64, 64)
    head_width: int = 64
    branches: tuple = ("image", "points")
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if self.input_mode not in ("stereo", "mono"):
            raise ValueError(f"input_mode must be 'stereo' or 'mono', got {self.input_mode!r}")
        if not set(self.branches) <= {"image", "points"} or not self.branches:
            raise ValueError(f"unknown branches {self.branches!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be 'float32' or 'float64', got {self.dtype!r}")

    @property
    def n_views(self) -> int:
        return 2 if self.input_mode == "stereo" else 1

    @property
    def in_channels(self) -> int:
        return 3 * self.n_views

    @property
    def total_points(self) -> int:
        return self.n_points * self.n_views

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


class ModelParams:
    """Ordered named tensors with a flat-vector view."""

    def __init__(self, tensors):
        self.tensors = OrderedDict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        if self.tensors[name].shape != np.shape(value):
            raise ValueError(f"shape mismatch for {name}")
        self.tensors[name] = np.asarray(value, dtype=self.tensors[name].dtype)

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    def with_flat(self, vec) -> "ModelParams":
        vec = np.asarray(vec)
        if vec.size != self.size:
            raise ValueError("flat vector has the wrong length")
        out, i = OrderedDict(), 0
        for name, t in self.tensors.items():
            out[name] = vec[i : i + t.size].reshape(t.shape).astype(t.dtype)
            i += t.size
        return ModelParams(out)

    def copy(self) -> "ModelParams":
        return ModelParams((k, v.copy()) for k, v in self.tensors.items())

    def zeros_like(self) -> "ModelParams":
        return ModelParams((k, np.zeros_like(v)) for k, v in self.tensors.items())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())


def init_params(config: ModelConfig, zero_output: bool = False) -> ModelParams:
    """He-normal weights, zero biases; deterministic in ``config.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2024]))
    dtype = np.dtype(config.dtype)
    p = OrderedDict()
    cin = config.in_channels
    for i, cout in enumerate(config.conv_channels):
        fan_in = 9 * cin
        p[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(3, 3, cin, cout))
        p[f"conv{i}.b"] = np.zeros(cout)
        cin = cout
    din = 2 * config.total_points
    for i, width in enumerate(config.points_widths):
        p[f"pts{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / din), size=(din, width))
        p[f"pts{i}.b"] = np.zeros(width)
        din = width
    fused = config.conv_channels[-1] + config.points_widths[-1]
    p["head0.w"] = rng.normal(0.0, np.sqrt(2.0 / fused), size=(fused, config.head_width))
    p["head0.b"] = np.zeros(config.head_width)
    p["head1.w"] = rng.normal(0.0, np.sqrt(1.0 / config.head_width), size=(config.head_width, 2))
    p["head1.b"] = np.zeros(2)
    if zero_output:
        p["head1.w"][:] = 0.0
    params = ModelParams((k, v.astype(dtype)) for k, v in p.items())
    for branch in ("image", "points"):
        if branch not in config.branches:
            zero_branch(params, branch, config)
    return params


def branch_rows(branch: str, config: ModelConfig) -> slice:
    """Rows of ``head0.w`` that read the given branch's features."""
    n_img = config.conv_channels[-1]
    if branch == "image":
        return slice(0, n_img)
    if branch == "points":
        return slice(n_img, n_img + config.points_widths[-1])
    raise ValueError(f"unknown branch {branch!r}")


def zero_branch(params: ModelParams, branch: str, config: ModelConfig) -> None:
    params["head0.w"][branch_rows(branch, config), :] = 0.0


# ---------------------------------------------------------------------------
# layers


def _conv_forward(x, w, b):
    """3x3 stride-2 pad-1 convolution, NHWC."""
    bsz, h, wd, c = x.shape
    ho, wo = (h - 1) // 2 + 1, (wd - 1) // 2 + 1
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((bsz, ho, wo, 9, c), dtype=x.dtype)
    for k in range(9):
        ki, kj = divmod(k, 3)
        cols[:, :, :, k, :] = xp[:, ki : ki + 2 * ho : 2, kj : kj + 2 * wo : 2, :]
    cols = cols.reshape(bsz * ho * wo, 9 * c)
    out = cols @ w.reshape(9 * c, -1) + b
    return out.reshape(bsz, ho, wo, -1), cols


def _conv_backward(dout, cols, x_shape, w):
    bsz, h, wd, c = x_shape
    ho, wo, cout = dout.shape[1:]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(9 * c, cout).T).reshape(bsz, ho, wo, 9, c)
    dxp = np.zeros((bsz, h + 2, wd + 2, c), dtype=dout.dtype)
    for k in range(9):
        ki, kj = divmod(k, 3)
        dxp[:, ki : ki + 2 * ho : 2, kj : kj + 2 * wo : 2, :] += dcols[:, :, :, k, :]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# network


def _check_inputs(images, points, config: ModelConfig):
    if images.ndim != 4 or images.shape[3] != config.in_channels:
        raise ValueError(f"images must be (B, H, W, {config.in_channels}), got {images.shape}")
    if points.ndim != 3 or points.shape[1:] != (config.total_points, 2):
        raise ValueError(f"points must be (B, {config.total_points}, 2), got {points.shape}")
    if images.shape[0] != points.shape[0]:
        raise ValueError("images and points disagree on batch size")


def forward(params: ModelParams, images, points, config: ModelConfig):
    """Predict normalized ``(u, v)`` in ``(0, 1)^2``.

    Returns ``(pred, cache)``; ``cache`` feeds :func:`backward`.
    """
    dtype = np.dtype(config.dtype)
    images = np.asarray(images, dtype=dtype)
    points = np.asarray(points, dtype=dtype)
    _check_inputs(images, points, config)
    cache = {"convs": []}

    x = images - 0.5
    for i in range(len(config.conv_channels)):
        z, cols = _conv_forward(x, params[f"conv{i}.w"], params[f"conv{i}.b"])
        cache["convs"].append((x.shape, cols, z > 0))
        x = np.maximum(z, 0.0)
    cache["pool_shape"] = x.shape
    f_img = x.mean(axis=(1, 2))

    h = points.reshape(points.shape[0], -1) - 0.5
    cache["pts"] = []
    for i in range(len(config.points_widths)):
        z = h @ params[f"pts{i}.w"] + params[f"pts{i}.b"]
        cache["pts"].append((h, z > 0))
        h = np.maximum(z, 0.0)

    fused = np.concatenate([f_img, h], axis=1)
    z0 = fused @ params["head0.w"] + params["head0.b"]
    a0 = np.maximum(z0, 0.0)
    z1 = a0 @ params["head1.w"] + params["head1.b"]
    pred = sigmoid(z1)
    cache.update(fused=fused, z0_pos=z0 > 0, a0=a0, pred=pred)
    return pred, cache


def backward(params: ModelParams, cache, dpred, config: ModelConfig) -> ModelParams:
    """Gradients of a scalar loss w.r.t. every parameter, given ``dL/dpred``."""
    g = OrderedDict()
    pred = cache["pred"]
    dz1 = dpred * pred * (1.0 - pred)
    g["head1.w"] = cache["a0"].T @ dz1
    g["head1.b"] = dz1.sum(axis=0)
    dz0 = (dz1 @ params["head1.w"].T) * cache["z0_pos"]
    g["head0.w"] = cache["fused"].T @ dz0
    g["head0.b"] = dz0.sum(axis=0)
    dfused = dz0 @ params["head0.w"].T
    n_img = config.conv_channels[-1]
    df_img, dh = dfused[:, :n_img], dfused[:, n_img:]

    for i in reversed(range(len(config.points_widths))):
        h_in, pos = cache["pts"][i]
        dz = dh * pos
        g[f"pts{i}.w"] = h_in.T @ dz
        g[f"pts{i}.b"] = dz.sum(axis=0)
        dh = dz @ params[f"pts{i}.w"].T

    bsz, ph, pw, pc = cache["pool_shape"]
    dx = np.broadcast_to(df_img[:, None, None, :] / (ph * pw), (bsz, ph, pw, pc))
    for i in reversed(range(len(config.conv_channels))):
        x_shape, cols, pos = cache["convs"][i]
        dz = dx * pos
        dx, g[f"conv{i}.w"], g[f"conv{i}.b"] = _conv_backward(dz, cols, x_shape, params[f"conv{i}.w"])

    for branch in ("image", "points"):
        if branch not in config.branches:
            g["head0.w"][branch_rows(branch, config), :] = 0.0
    return ModelParams((name, g[name]) for name in params.names())


def loss_mse(pred, target) -> float:
    """Mean over the batch and both coordinates: ``mean((du^2 + dv^2) / 2)``."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff * diff))


def loss_mse_grad(pred, target):
    pred = np.asarray(pred)
    return 2.0 * (pred - np.asarray(target, dtype=pred.dtype)) / pred.size


def loss_and_grads(params: ModelParams, images, points, targets, config: ModelConfig):
    pred, cache = forward(params, images, points, config)
    loss = loss_mse(pred, targets)
    grads = backward(params, cache, loss_mse_grad(pred, targets), config)
    return loss, grads


@dataclass
class GradCheckResult:
    rel_errors: dict = field(default_factory=dict)  # tensor name -> relative error
    n_checked: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_errors.values())


def gradient_check(params: ModelParams, images, points, targets, config: ModelConfig,
                   h: float = 1e-6, entries_per_tensor=None, seed: int = 0) -> GradCheckResult:
    """Compare analytic gradients against central differences, tensor by tensor.

    The relative error of a tensor is ``||g_a - g_n|| / (||g_a|| + ||g_n||)``
    over the checked entries. ``entries_per_tensor`` limits the number of
    randomly chosen entries per tensor (all entries when ``None``). The small
    default step keeps the two probes on the same side of nearly every ReLU
    kink; float64 round-off at this step is still around 1e-9 relative.
    """
    if np.dtype(config.dtype) != np.float64:
        raise ValueError("gradient checks need float64 parameters")
    _, grads = loss_and_grads(params, images, points, targets, config)
    rng = np.random.default_rng(seed)
    result = GradCheckResult()
    for name, tensor in params.items():
        flat = tensor.reshape(-1)
        idx = np.arange(flat.size)
        if entries_per_tensor is not None and flat.size > entries_per_tensor:
            idx = np.sort(rng.choice(flat.size, size=entries_per_tensor, replace=False))
        numeric = np.empty(idx.size)
        for j, k in enumerate(idx):
            old = flat[k]
            flat[k] = old + h
            lp = loss_mse(forward(params, images, points, config)[0], targets)
            flat[k] = old - h
            lm = loss_mse(forward(params, images, points, config)[0], targets)
            flat[k] = old
            numeric[j] = (lp - lm) / (2 * h)
        analytic = grads[name].reshape(-1)[idx]
        denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        err = 0.0 if denom == 0 else float(np.linalg.norm(analytic - numeric) / denom)
        result.rel_errors[name] = err
        result.n_checked[name] = int(idx.size)
    return result
