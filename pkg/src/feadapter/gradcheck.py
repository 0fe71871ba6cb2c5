"""Reverse-mode vs central-difference verification on a whole model."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import VideoViT
from .config import parameter_layout
from .errors import UsageError

FLOOR = 1e-5  # relative-error denominator floor; coordinates this small are noise


def randomize_trainable(model: VideoViT, seed: int, scale: float = 0.05) -> None:
    """Replace trainable tensors with small random values so every
    gradient path (including zero-initialized up-projections and rate
    heads) actually carries signal during verification."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xC0DE])))
    for name in sorted(model.params):
        t = model.params[name]
        if t.requires_grad:
            t.data = rng.normal(0.0, scale, size=t.shape).astype(t.data.dtype)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return float((np.abs(analytic - numeric) / denom).max())


def gradcheck_model(model: VideoViT, clips: np.ndarray, labels: np.ndarray,
                    eps: float = 1e-5) -> dict[str, float]:
    """Max relative backward-vs-finite-difference error per parameter
    group, over every coordinate of every trainable tensor.

    The model should be built in float64; central differences are
    unreliable at 32 bit.
    """
    if model.dtype != np.float64:
        raise UsageError("gradcheck requires a float64 model")

    def loss_value() -> float:
        return float(T.cross_entropy(model.forward(clips), labels).data)

    model.zero_grad()
    loss = T.cross_entropy(model.forward(clips), labels)
    loss.backward()

    groups = {spec.name: spec.group for spec in parameter_layout(model.cfg)}
    worst: dict[str, float] = {}
    for name in sorted(model.params):
        p = model.params[name]
        if not p.requires_grad:
            continue
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = np.zeros_like(p.data)
        flat = p.data.ravel()
        nflat = numeric.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_value()
            flat[i] = orig - eps
            lo = loss_value()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * eps)
        err = max_relative_error(analytic, numeric)
        group = groups[name]
        worst[group] = max(worst.get(group, 0.0), err)
    model.zero_grad()
    return worst
