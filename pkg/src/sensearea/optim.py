"""Adam and the staged learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import ModelParams

# Fractions of the run at which the rate drops, and the multiplier that applies
# from each breakpoint on. A 700 epoch run drops at epochs 300 and 400.
DEFAULT_BREAKPOINTS = (Fraction(3, 7), Fraction(4, 7))
DEFAULT_FACTORS = (1.0, 0.5, 0.25)


def lr_schedule(epoch: int, total_epochs: int, base_lr: float,
                breakpoints=DEFAULT_BREAKPOINTS, factors=DEFAULT_FACTORS) -> float:
    """Piecewise-constant rate: ``base_lr * factors[k]`` in the k-th segment.

    Breakpoints are compared exactly (as fractions), so ``epoch < 3/7 * 700``
    switches at epoch 300 without float round-off.
    """
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if len(factors) != len(breakpoints) + 1:
        raise ValueError("need one factor per schedule segment")
    bps = [Fraction(b).limit_denominator(10**6) if not isinstance(b, Fraction) else b for b in breakpoints]
    if any(not 0 < b <= 1 for b in bps) or bps != sorted(bps):
        raise ValueError("breakpoints must be ascending within (0, 1]")
    for bp, factor in zip(bps, factors):
        if epoch < bp * total_epochs:
            return base_lr * factor
    return base_lr * factors[-1]


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, beta1, beta2, eps)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    if params.names() != grads.names() or params.names() != state.m.names():
        raise ValueError("params, grads and optimizer state disagree on tensor names")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name in params:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
