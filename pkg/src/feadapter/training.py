"""Freeze plans, AdamW with cosine annealing, and the training loop."""

from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .adapter import count_tunable_params
from .backbone import VideoViT
from .config import TrainConfig, group_is_trainable, parameter_layout
from .data import VideoBatch
from .errors import ConfigError, NonFiniteError, TrainingDiverged, UsageError
from .metrics import MetricsReport, uar_war
from .tensor import Tensor

_EVAL_CHUNK = 32


@dataclass(frozen=True)
class FreezePlan:
    mode: str
    trainable: tuple[str, ...]


def apply_freeze(model: VideoViT, mode: str) -> FreezePlan:
    """Set requires_grad flags so the optimizer sees only the mode's
    trainable set: everything (full), head only (linear_probe and
    temporal_aggregation), or adapters plus head (adapter)."""
    adapter_active = model.cfg.adapter.active(model.cfg.depth)
    if mode == "adapter" and not adapter_active:
        raise ConfigError("freeze mode 'adapter' requires an adapter variant other than 'none'")
    if mode == "temporal_aggregation" and adapter_active:
        raise ConfigError("freeze mode 'temporal_aggregation' requires adapter.variant = 'none'")
    trainable = []
    for spec in parameter_layout(model.cfg):
        flag = group_is_trainable(spec.group, mode)
        model.params[spec.name].requires_grad = flag
        if flag:
            trainable.append(spec.name)
    return FreezePlan(mode=mode, trainable=tuple(trainable))


def frozen_digest(model: VideoViT) -> str:
    """SHA-256 over the raw bytes of all frozen parameter tensors."""
    h = hashlib.sha256()
    for name in sorted(model.params):
        t = model.params[name]
        if not t.requires_grad:
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def backbone_digest(model: VideoViT) -> str:
    """SHA-256 over backbone-group tensors, independent of freeze flags."""
    groups = {spec.name: spec.group for spec in parameter_layout(model.cfg)}
    h = hashlib.sha256()
    for name in sorted(model.params):
        if groups[name] == "backbone":
            h.update(name.encode())
            h.update(np.ascontiguousarray(model.params[name].data).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def adamw_step(param: np.ndarray, grad: np.ndarray | None, state: dict,
               lr: float, weight_decay: float,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> np.ndarray:
    """One decoupled-decay Adam update. The decay multiplies the
    parameter by (1 - lr*weight_decay) before the adaptive step; state
    holds first/second moments and the step count and is mutated."""
    state["t"] += 1
    t = state["t"]
    b1, b2 = betas
    out = param * (1.0 - lr * weight_decay)
    if grad is None:
        grad = np.zeros_like(param)
    m, v = state["m"], state["v"]
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    return out - lr * mhat / (np.sqrt(vhat) + eps)


class AdamW:
    """AdamW over a named parameter dict, updated in sorted-name order
    so results are reproducible."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.order = sorted(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = {
            name: {"m": np.zeros_like(params[name].data),
                   "v": np.zeros_like(params[name].data), "t": 0}
            for name in self.order
        }

    def step(self, lr: float | None = None) -> None:
        use_lr = self.lr if lr is None else lr
        for name in self.order:
            p = self.params[name]
            p.data = adamw_step(p.data, p.grad, self.state[name], use_lr,
                                self.weight_decay, self.betas, self.eps)

    def zero_grad(self) -> None:
        for name in self.order:
            self.params[name].grad = None


def cosine_lr(epoch: int, total_epochs: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Cosine annealing from base_lr at epoch 0 to min_lr at the end."""
    if not 0 <= epoch <= total_epochs:
        raise UsageError(f"epoch {epoch} outside [0, {total_epochs}]")
    return min_lr + (base_lr - min_lr) * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    report: MetricsReport
    best_state: dict[str, np.ndarray]
    records: list


def _head_only(plan: FreezePlan) -> bool:
    return set(plan.trainable) == {"head.weight", "head.bias"}


def _encode_all(model: VideoViT, clips: np.ndarray) -> np.ndarray:
    feats = []
    for lo in range(0, len(clips), _EVAL_CHUNK):
        feats.append(model.encode(clips[lo:lo + _EVAL_CHUNK]).data)
    return np.concatenate(feats, axis=0)


def evaluate_model(model: VideoViT, data: VideoBatch) -> MetricsReport:
    """Deterministic argmax evaluation over a whole batch collection."""
    total = len(data)
    preds = np.empty(total, dtype=np.int64)
    for lo in range(0, total, _EVAL_CHUNK):
        hi = min(lo + _EVAL_CHUNK, total)
        preds[lo:hi] = model.forward(data.clips[lo:hi]).data.argmax(axis=-1)
    return uar_war(preds, data.labels, model.cfg.classes)


def train(model: VideoViT, data: VideoBatch, tcfg: TrainConfig,
          mode: str | None = None, log_path: str | None = None,
          echo: bool = False, on_eval=None) -> TrainResult:
    """Cross-entropy training with per-epoch cosine annealing.

    Shuffling, and therefore the whole run, is fixed by the seed. Eval
    metrics are recorded on the training set every ``eval_every``
    epochs and at the end; the best-WAR state is restored into the
    model before returning. ``on_eval(epoch, report)`` may return True
    to stop early. Emits one record per epoch as JSON lines.
    """
    mode = mode or tcfg.freeze
    plan = apply_freeze(model, mode)
    counts = count_tunable_params(model)
    trainables = {name: model.params[name] for name in plan.trainable}
    opt = AdamW(trainables, tcfg.lr, tcfg.weight_decay)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([tcfg.seed, 0x10AD])))
    total = len(data)

    # With only the head training, the frozen features never change:
    # encode once and train the head on the cache.
    cached = _encode_all(model, data.clips) if _head_only(plan) else None

    def batch_logits(idx: np.ndarray) -> Tensor:
        if cached is not None:
            feats = Tensor(cached[idx])
            return T.matmul(feats, model.params["head.weight"]) + model.params["head.bias"]
        return model.forward(data.clips[idx])

    def evaluate() -> MetricsReport:
        preds = np.empty(total, dtype=np.int64)
        for lo in range(0, total, _EVAL_CHUNK):
            idx = np.arange(lo, min(lo + _EVAL_CHUNK, total))
            preds[idx] = batch_logits(idx).data.argmax(axis=-1)
        return uar_war(preds, data.labels, model.cfg.classes)

    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    records: list = []
    best_war, best_epoch = -1.0, -1
    best_state: dict[str, np.ndarray] = {k: v.data.copy() for k, v in trainables.items()}
    best_metrics: MetricsReport | None = None
    started = time.perf_counter()
    step_count = 0
    try:
        for epoch in range(tcfg.epochs):
            lr = cosine_lr(epoch, tcfg.epochs, tcfg.lr, tcfg.min_lr)
            perm = rng.permutation(total)
            loss_sum = 0.0
            for lo in range(0, total, tcfg.batch):
                idx = perm[lo:lo + tcfg.batch]
                step_count += 1
                try:
                    logits = batch_logits(idx)
                    loss = T.cross_entropy(logits, data.labels[idx])
                    loss.backward()
                except NonFiniteError as exc:
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, step {step_count}: {exc}") from exc
                opt.step(lr)
                opt.zero_grad()
                loss_sum += float(loss.data) * len(idx)
            epoch_loss = loss_sum / total
            record = {"epoch": epoch, "lr": lr, "loss": epoch_loss, "uar": None, "war": None}
            stop = False
            if (epoch + 1) % tcfg.eval_every == 0 or epoch == tcfg.epochs - 1:
                m = evaluate()
                record["uar"], record["war"] = m.uar, m.war
                if m.war > best_war:
                    best_war, best_epoch, best_metrics = m.war, epoch, m
                    best_state = {k: v.data.copy() for k, v in trainables.items()}
                if on_eval is not None and on_eval(epoch, m):
                    stop = True
            records.append(record)
            line = json.dumps(record)
            if log_fh:
                log_fh.write(line + "\n")
            if echo:
                sys.stdout.write(line + "\n")
            if stop:
                break
    finally:
        if log_fh:
            log_fh.close()
    for name, arr in best_state.items():
        model.params[name].data = arr.copy()
    report = best_metrics if best_metrics is not None else evaluate()
    report.trainable_params = counts.trainable
    report.total_params = counts.total
    report.param_ratio = counts.ratio
    report.epoch_curve = records
    report.wall_clock_s = time.perf_counter() - started
    report.best_epoch = best_epoch if best_epoch >= 0 else None
    return TrainResult(report=report, best_state=best_state, records=records)
