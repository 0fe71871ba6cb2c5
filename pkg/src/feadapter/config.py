"""Configuration types, the parameter inventory they imply, and the
flat key-value experiment-config file format."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .errors import ConfigError

ADAPTER_VARIANTS = ("none", "vanilla", "dw_conv3d", "d2_conv3d")
ADAPTER_POSITIONS = ("before_mhsa", "after_mhsa", "after_mlp")
ADAPTER_ACTIVATIONS = ("gelu", "relu", "identity")
FREEZE_MODES = ("full", "linear_probe", "adapter", "temporal_aggregation")

# Reference tunable-parameter budget (millions are reported elsewhere;
# this is the raw count) used to derive the default bottleneck width
# for large geometries. See derive_bottleneck_width in adapter.py.
PARAM_BUDGET_TARGET = 6_600_000


@dataclass(frozen=True)
class AdapterConfig:
    """Bottleneck-adapter settings: variant, width, and placement."""

    variant: str = "none"
    r: int = 16
    blocks: tuple[int, ...] | None = None  # 1-based block indices; None = every block
    position: str = "before_mhsa"
    kernel: tuple[int, int, int] = (3, 3, 3)
    activation: str = "gelu"

    def __post_init__(self):
        if self.variant not in ADAPTER_VARIANTS:
            raise ConfigError(f"unknown adapter variant {self.variant!r}; expected one of {ADAPTER_VARIANTS}")
        if self.position not in ADAPTER_POSITIONS:
            raise ConfigError(f"unknown adapter position {self.position!r}; expected one of {ADAPTER_POSITIONS}")
        if self.activation not in ADAPTER_ACTIVATIONS:
            raise ConfigError(f"unknown adapter activation {self.activation!r}")
        if self.r < 1:
            raise ConfigError(f"bottleneck width must be >= 1, got {self.r}")
        if len(self.kernel) != 3 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ConfigError(f"kernel extents must be odd and positive, got {self.kernel}")

    def resolved_blocks(self, depth: int) -> tuple[int, ...]:
        """The 1-based blocks actually carrying an adapter."""
        if self.variant == "none":
            return ()
        if self.blocks is None:
            return tuple(range(1, depth + 1))
        return tuple(sorted(set(self.blocks)))

    def active(self, depth: int) -> bool:
        # an empty block set behaves exactly like variant=none
        return self.variant != "none" and len(self.resolved_blocks(depth)) > 0


@dataclass(frozen=True)
class ModelConfig:
    """Backbone geometry plus adapter settings."""

    frames: int = 8
    height: int = 32
    width: int = 32
    patch: int = 8
    hidden: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    classes: int = 4
    adapter: AdapterConfig = field(default_factory=AdapterConfig)

    def __post_init__(self):
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(
                f"frame extents {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.adapter.variant != "none":
            if self.adapter.r >= self.hidden:
                raise ConfigError(
                    f"bottleneck width {self.adapter.r} must be below hidden width {self.hidden}")
            bad = [b for b in self.adapter.resolved_blocks(self.depth) if not 1 <= b <= self.depth]
            if bad:
                raise ConfigError(f"adapter blocks {bad} outside 1..{self.depth}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def tokens_per_frame(self) -> int:
        return self.num_patches + 1

    @property
    def mlp_width(self) -> int:
        return int(round(self.hidden * self.mlp_ratio))


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. The seed fixes every source of randomness."""

    lr: float = 5e-4
    weight_decay: float = 1e-2
    batch: int = 8
    epochs: int = 20
    seed: int = 0
    eval_every: int = 1
    min_lr: float = 0.0
    freeze: str = "adapter"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.freeze not in FREEZE_MODES:
            raise ConfigError(f"unknown freeze mode {self.freeze!r}; expected one of {FREEZE_MODES}")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    train: TrainConfig
    clips_per_class: int = 40
    noise: float = 0.02
    out_dir: str = "runs/default"
    raw: dict = field(default_factory=dict, compare=False)


# ---------------------------------------------------------------------------
# parameter inventory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    group: str  # "backbone" | "adapter.block{i}" | "dilation.block{i}" | "classifier"

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


def parameter_layout(cfg: ModelConfig) -> list[ParamSpec]:
    """Every parameter tensor the model owns, in construction order.

    This is the single source of truth shared by the weight builder,
    the parameter counter, and the freeze planner.
    """
    d = cfg.hidden
    specs: list[ParamSpec] = []

    def bb(name, shape):
        specs.append(ParamSpec(name, tuple(shape), "backbone"))

    bb("patch_embed.weight", (3 * cfg.patch * cfg.patch, d))
    bb("patch_embed.bias", (d,))
    bb("pos_embed", (cfg.tokens_per_frame, d))
    bb("cls_token", (d,))
    ad = cfg.adapter
    adapter_blocks = ad.resolved_blocks(cfg.depth)
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        bb(pre + "ln1.gamma", (d,))
        bb(pre + "ln1.beta", (d,))
        for proj in ("q", "k", "v", "out"):
            bb(pre + f"attn.{proj}.weight", (d, d))
            bb(pre + f"attn.{proj}.bias", (d,))
        bb(pre + "ln2.gamma", (d,))
        bb(pre + "ln2.beta", (d,))
        bb(pre + "mlp.fc1.weight", (d, cfg.mlp_width))
        bb(pre + "mlp.fc1.bias", (cfg.mlp_width,))
        bb(pre + "mlp.fc2.weight", (cfg.mlp_width, d))
        bb(pre + "mlp.fc2.bias", (d,))
        if (i + 1) in adapter_blocks:
            agrp = f"adapter.block{i + 1}"
            specs.append(ParamSpec(pre + "adapter.down.weight", (d, ad.r), agrp))
            specs.append(ParamSpec(pre + "adapter.down.bias", (ad.r,), agrp))
            specs.append(ParamSpec(pre + "adapter.up.weight", (ad.r, d), agrp))
            specs.append(ParamSpec(pre + "adapter.up.bias", (d,), agrp))
            if ad.variant in ("dw_conv3d", "d2_conv3d"):
                specs.append(ParamSpec(pre + "adapter.conv.kernel", (ad.r, *ad.kernel), agrp))
            if ad.variant == "d2_conv3d":
                dgrp = f"dilation.block{i + 1}"
                specs.append(ParamSpec(pre + "adapter.dilation.weight", (ad.r, 3), dgrp))
                specs.append(ParamSpec(pre + "adapter.dilation.bias", (3,), dgrp))
    bb("final_norm.gamma", (d,))
    bb("final_norm.beta", (d,))
    specs.append(ParamSpec("head.weight", (d, cfg.classes), "classifier"))
    specs.append(ParamSpec("head.bias", (cfg.classes,), "classifier"))
    return specs


def group_is_trainable(group: str, mode: str) -> bool:
    """Whether a parameter group trains under a freeze mode. The
    classifier head trains in every mode."""
    if mode not in FREEZE_MODES:
        raise ConfigError(f"unknown freeze mode {mode!r}")
    if mode == "full":
        return True
    if group == "classifier":
        return True
    if mode == "adapter":
        return group.startswith("adapter.") or group.startswith("dilation.")
    return False  # linear_probe / temporal_aggregation: head only


# ---------------------------------------------------------------------------
# experiment-config files: flat "section.key = value" lines
# ---------------------------------------------------------------------------

_SCHEMA: dict[str, type | str] = {
    "model.frames": int,
    "model.height": int,
    "model.width": int,
    "model.patch": int,
    "model.hidden": int,
    "model.depth": int,
    "model.heads": int,
    "model.mlp_ratio": float,
    "model.classes": int,
    "adapter.variant": str,
    "adapter.r": "int_or_auto",
    "adapter.blocks": str,
    "adapter.position": str,
    "adapter.kernel": str,
    "adapter.activation": str,
    "train.lr": float,
    "train.weight_decay": float,
    "train.batch": int,
    "train.epochs": int,
    "train.seed": int,
    "train.eval_every": int,
    "train.min_lr": float,
    "train.freeze": str,
    "data.clips_per_class": int,
    "data.noise": float,
    "out.dir": str,
}


def _parse_blocks(text: str) -> tuple[int, ...] | None:
    if text.strip().lower() == "all":
        return None
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ConfigError(f"adapter.blocks gives no blocks: {text!r}")
    return tuple(out)


def _parse_kernel(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"adapter.kernel must be three comma-separated extents, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse and type-check the flat key-value format. Unknown keys are
    rejected by name; '#' starts a comment."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        kind = _SCHEMA[key]
        try:
            if kind == "int_or_auto":
                values[key] = "auto" if val.lower() == "auto" else int(val)
            elif kind is str:
                values[key] = val
            else:
                values[key] = kind(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {val!r}") from exc
    return values


def experiment_from_values(values: dict) -> ExperimentConfig:
    """Build a fully validated ExperimentConfig from parsed key-values."""
    def get(key, default):
        return values.get(key, default)

    r = get("adapter.r", 16)
    hidden = get("model.hidden", 64)
    depth = get("model.depth", 4)
    classes = get("model.classes", 4)
    kernel = _parse_kernel(get("adapter.kernel", "3,3,3"))
    variant = get("adapter.variant", "none")
    if r == "auto":
        from .adapter import derive_bottleneck_width
        r = derive_bottleneck_width(hidden, depth, classes, kernel=kernel, variant=variant)
    adapter = AdapterConfig(
        variant=variant,
        r=int(r),
        blocks=_parse_blocks(get("adapter.blocks", "all")),
        position=get("adapter.position", "before_mhsa"),
        kernel=kernel,
        activation=get("adapter.activation", "gelu"),
    )
    model = ModelConfig(
        frames=get("model.frames", 8),
        height=get("model.height", 32),
        width=get("model.width", 32),
        patch=get("model.patch", 8),
        hidden=hidden,
        depth=depth,
        heads=get("model.heads", 4),
        mlp_ratio=get("model.mlp_ratio", 4.0),
        classes=classes,
        adapter=adapter,
    )
    train = TrainConfig(
        lr=get("train.lr", 5e-4),
        weight_decay=get("train.weight_decay", 1e-2),
        batch=get("train.batch", 8),
        epochs=get("train.epochs", 20),
        seed=get("train.seed", 0),
        eval_every=get("train.eval_every", 1),
        min_lr=get("train.min_lr", 0.0),
        freeze=get("train.freeze", "adapter"),
    )
    if train.freeze == "adapter" and not model.adapter.active(model.depth):
        raise ConfigError("train.freeze = adapter requires an adapter variant other than 'none'")
    if train.freeze == "temporal_aggregation" and model.adapter.active(model.depth):
        raise ConfigError("train.freeze = temporal_aggregation requires adapter.variant = none")
    return ExperimentConfig(
        model=model,
        train=train,
        clips_per_class=get("data.clips_per_class", 40),
        noise=get("data.noise", 0.02),
        out_dir=get("out.dir", "runs/default"),
        raw=dict(values),
    )


def load_experiment_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return experiment_from_values(parse_config_text(text, source=path))


def config_echo(cfg: ExperimentConfig) -> dict:
    """Flat, JSON-serializable key-value echo of an experiment config."""
    m, a, t = cfg.model, cfg.model.adapter, cfg.train
    return {
        "model.frames": m.frames, "model.height": m.height, "model.width": m.width,
        "model.patch": m.patch, "model.hidden": m.hidden, "model.depth": m.depth,
        "model.heads": m.heads, "model.mlp_ratio": m.mlp_ratio, "model.classes": m.classes,
        "adapter.variant": a.variant, "adapter.r": a.r,
        "adapter.blocks": "all" if a.blocks is None else ",".join(map(str, a.blocks)),
        "adapter.position": a.position,
        "adapter.kernel": ",".join(map(str, a.kernel)),
        "adapter.activation": a.activation,
        "train.lr": t.lr, "train.weight_decay": t.weight_decay, "train.batch": t.batch,
        "train.epochs": t.epochs, "train.seed": t.seed, "train.eval_every": t.eval_every,
        "train.min_lr": t.min_lr, "train.freeze": t.freeze,
        "data.clips_per_class": cfg.clips_per_class, "data.noise": cfg.noise,
        "out.dir": cfg.out_dir,
    }


def experiment_from_echo(echo: dict) -> ExperimentConfig:
    """Rebuild an ExperimentConfig from a config echo (checkpoint header)."""
    values = {k: v for k, v in echo.items() if k in _SCHEMA}
    parsed = {}
    for k, v in values.items():
        kind = _SCHEMA[k]
        if kind == "int_or_auto":
            parsed[k] = int(v)
        elif kind in (int, float, str):
            parsed[k] = kind(v)
    return experiment_from_values(parsed)


def with_overrides(cfg: ExperimentConfig, seed: int | None = None,
                   out_dir: str | None = None) -> ExperimentConfig:
    new = cfg
    if seed is not None:
        new = replace(new, train=replace(new.train, seed=seed))
    if out_dir is not None:
        new = replace(new, out_dir=out_dir)
    return new
