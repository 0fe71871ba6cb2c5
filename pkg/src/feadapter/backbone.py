"""Frame-wise ViT video classifier with temporal average pooling.

Each frame is encoded independently by a pre-norm ViT (spatial
attention only); the per-frame class tokens are averaged over time,
normalized, and classified. Temporal structure enters only through
adapters hooked into the blocks.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .adapter import AdapterWeights, apply_adapter
from .config import ModelConfig, parameter_layout
from .errors import ConfigError, ShapeError, UsageError
from .tensor import Tensor


def patchify(frame, patch: int) -> Tensor:
    """Split a (3, H, W) frame into raster-ordered rows of channel-major
    flattened PxP patches: (N, 3*P*P) with N = H*W/P^2."""
    arr = frame.data if isinstance(frame, Tensor) else np.asarray(frame)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) frame, got {arr.shape}")
    _, h, w = arr.shape
    if h % patch or w % patch:
        raise ConfigError(f"frame extents {h}x{w} not divisible by patch {patch}")
    out = patchify_clips(arr[None, None], patch)[0, 0]
    return Tensor(out)


def patchify_clips(clips: np.ndarray, patch: int) -> np.ndarray:
    """(B, T, 3, H, W) -> (B, T, N, 3*P*P), raster patch order."""
    b, t, c, h, w = clips.shape
    gh, gw = h // patch, w // patch
    x = clips.reshape(b, t, c, gh, patch, gw, patch)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6)  # patches indexed (gh, gw), contents (c, P, P)
    return np.ascontiguousarray(x).reshape(b, t, gh * gw, c * patch * patch)


def embed_tokens(patches, proj_w, proj_b, cls_token, pos_embed) -> Tensor:
    """Project patch rows, prepend the class token at index 0, add
    positional embeddings to all N+1 rows."""
    patches = patches if isinstance(patches, Tensor) else Tensor(patches)
    if patches.shape[-1] != proj_w.shape[0]:
        raise ShapeError(f"patch width {patches.shape[-1]} does not match projection {proj_w.shape}")
    tok = T.matmul(patches, proj_w) + proj_b
    lead = tok.shape[:-2]
    hidden = tok.shape[-1]
    cls = T.broadcast_to(cls_token, (*lead, 1, hidden))
    return T.concat([cls, tok], axis=-2) + pos_embed


def embed_frame(patches, proj_w, proj_b, cls_token, pos_embed) -> Tensor:
    """(N, 3*P*P) patch rows -> (N+1, hidden) embedded tokens."""
    return embed_tokens(patches, proj_w, proj_b, cls_token, pos_embed)


def _swap_last(t: Tensor) -> Tensor:
    perm = list(range(t.data.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return T.transpose(t, perm)


def mhsa(x, wq, bq, wk, bk, wv, bv, wo, bo, heads: int) -> Tensor:
    """Multi-head scaled dot-product self-attention over the second-to-
    last axis, with output projection. Works for any leading shape."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    lead = x.shape[:-2]
    s, hidden = x.shape[-2:]
    if hidden % heads:
        raise ConfigError(f"hidden {hidden} not divisible by heads {heads}")
    dh = hidden // heads
    scale = 1.0 / math.sqrt(dh)

    def split(t):
        return T.moveaxis(T.reshape(t, (*lead, s, heads, dh)), -2, -3)

    q = split(T.matmul(x, wq) + bq)
    k = split(T.matmul(x, wk) + bk)
    v = split(T.matmul(x, wv) + bv)
    att = T.softmax_lastdim(T.matmul(q, _swap_last(k)) * scale)
    ctx = T.matmul(att, v)                       # (..., heads, s, dh)
    ctx = T.reshape(T.moveaxis(ctx, -3, -2), (*lead, s, hidden))
    return T.matmul(ctx, wo) + bo


def temporal_average_pool(cls_tokens) -> Tensor:
    """Arithmetic mean of per-frame class tokens over the frame axis:
    (..., T, hidden) -> (..., hidden)."""
    cls_tokens = cls_tokens if isinstance(cls_tokens, Tensor) else Tensor(cls_tokens)
    if cls_tokens.data.ndim < 2 or cls_tokens.shape[-2] == 0:
        raise UsageError(f"need at least one frame of class tokens, got shape {cls_tokens.shape}")
    return T.mean_axis(cls_tokens, axis=-2)


class VideoViT:
    """The assembled video classifier.

    Weights live in a flat name -> Tensor dict following
    ``parameter_layout``. Backbone and adapter weights are drawn from
    independent seeded streams, so the backbone bytes are identical
    across adapter configurations for a given seed. A constructed model
    is immutable during evaluation; training mutates weights under a
    single writer.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        backbone_ss, adapter_ss = np.random.SeedSequence(seed).spawn(2)
        rng_b = np.random.Generator(np.random.PCG64(backbone_ss))
        rng_a = np.random.Generator(np.random.PCG64(adapter_ss))
        self.params: dict[str, Tensor] = {}
        for spec in parameter_layout(cfg):
            rng = rng_b if spec.group in ("backbone", "classifier") else rng_a
            self.params[spec.name] = Tensor(
                self._init_param(spec.name, spec.shape, rng), requires_grad=True)

    def _init_param(self, name: str, shape, rng) -> np.ndarray:
        if name in ("pos_embed", "cls_token"):
            return (rng.normal(0.0, 0.02, size=shape)).astype(self.dtype)
        if name.startswith("head.") or name.endswith("adapter.up.weight"):
            return np.zeros(shape, dtype=self.dtype)
        if name.endswith("adapter.conv.kernel"):
            taps = shape[1] * shape[2] * shape[3]
            return (rng.normal(0.0, 1.0 / math.sqrt(taps), size=shape)).astype(self.dtype)
        if name.endswith("adapter.dilation.weight"):
            return np.zeros(shape, dtype=self.dtype)
        if name.endswith("adapter.dilation.bias"):
            from .adapter import RATE_HEAD_BIAS
            return np.full(shape, RATE_HEAD_BIAS, dtype=self.dtype)
        if name.endswith(".gamma"):
            return np.ones(shape, dtype=self.dtype)
        if name.endswith(".weight") and len(shape) == 2:
            std = math.sqrt(2.0 / (shape[0] + shape[1]))
            return (rng.normal(0.0, std, size=shape)).astype(self.dtype)
        return np.zeros(shape, dtype=self.dtype)  # biases, ln beta

    # -- forward ------------------------------------------------------

    def _check_clips(self, clips: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        expected = (cfg.frames, 3, cfg.height, cfg.width)
        if clips.ndim == 4:
            clips = clips[None]
        if clips.ndim != 5 or clips.shape[1:] != expected:
            raise ShapeError(
                f"clip extents {clips.shape} do not match expected (batch,)+{expected}")
        return clips

    def _adapter_weights(self, i: int) -> AdapterWeights:
        p, pre = self.params, f"blocks.{i}.adapter."
        return AdapterWeights(
            down_w=p[pre + "down.weight"], down_b=p[pre + "down.bias"],
            up_w=p[pre + "up.weight"], up_b=p[pre + "up.bias"],
            kernel=p.get(pre + "conv.kernel"),
            dil_w=p.get(pre + "dilation.weight"), dil_b=p.get(pre + "dilation.bias"),
        )

    def _run_adapter(self, x: Tensor, i: int) -> Tensor:
        cfg = self.cfg
        b, t, s, hidden = x.shape
        flat = T.reshape(x, (b, t * s, hidden))
        out = apply_adapter(flat, self._adapter_weights(i), cfg.adapter, t, cfg.grid)
        return T.reshape(out, (b, t, s, hidden))

    def _block(self, x: Tensor, i: int) -> Tensor:
        cfg = self.cfg
        p, pre = self.params, f"blocks.{i}."
        hook = None
        if (i + 1) in cfg.adapter.resolved_blocks(cfg.depth):
            hook = cfg.adapter.position
        if hook == "before_mhsa":
            x = self._run_adapter(x, i)
        h = T.layer_norm(x, p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
        x = x + mhsa(h,
                     p[pre + "attn.q.weight"], p[pre + "attn.q.bias"],
                     p[pre + "attn.k.weight"], p[pre + "attn.k.bias"],
                     p[pre + "attn.v.weight"], p[pre + "attn.v.bias"],
                     p[pre + "attn.out.weight"], p[pre + "attn.out.bias"],
                     cfg.heads)
        if hook == "after_mhsa":
            x = self._run_adapter(x, i)
        h = T.layer_norm(x, p[pre + "ln2.gamma"], p[pre + "ln2.beta"])
        h = T.matmul(h, p[pre + "mlp.fc1.weight"]) + p[pre + "mlp.fc1.bias"]
        h = T.gelu(h)
        x = x + (T.matmul(h, p[pre + "mlp.fc2.weight"]) + p[pre + "mlp.fc2.bias"])
        if hook == "after_mlp":
            x = self._run_adapter(x, i)
        return x

    def encode(self, clips) -> Tensor:
        """Pooled, normalized clip features: (batch, hidden)."""
        clips = np.asarray(clips, dtype=self.dtype)
        clips = self._check_clips(clips)
        p = self.params
        patches = patchify_clips(clips, self.cfg.patch)
        x = embed_tokens(Tensor(patches), p["patch_embed.weight"], p["patch_embed.bias"],
                         p["cls_token"], p["pos_embed"])
        for i in range(self.cfg.depth):
            x = self._block(x, i)
        cls = x[:, :, 0, :]                      # (batch, frames, hidden)
        pooled = temporal_average_pool(cls)
        return T.layer_norm(pooled, p["final_norm.gamma"], p["final_norm.beta"])

    def forward(self, clips) -> Tensor:
        """Logits for one clip (classes,) or a batch (batch, classes)."""
        single = np.asarray(clips).ndim == 4
        feats = self.encode(clips)
        logits = T.matmul(feats, self.params["head.weight"]) + self.params["head.bias"]
        return logits[0] if single else logits

    # -- parameter access ---------------------------------------------

    def named_parameters(self):
        return self.params.items()

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            if name not in self.params:
                raise ShapeError(f"unknown tensor {name!r} for this configuration")
            dst = self.params[name]
            if tuple(arr.shape) != dst.shape:
                raise ShapeError(f"tensor {name!r}: shape {arr.shape} does not match {dst.shape}")
            dst.data = arr.astype(dst.data.dtype, copy=True)
