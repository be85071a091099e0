"""Model and run configuration, including the S/M/L ladder and the presets."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# Desk-scale encoder/decoder widths. The ordering S < M < L is what matters.
SIZE_LADDER = {
    "S": dict(encoder_dim=96, encoder_layers=4, encoder_heads=3,
              decoder_dim=128, decoder_heads=4, decoder_ffn_dim=512),
    "M": dict(encoder_dim=128, encoder_layers=6, encoder_heads=4,
              decoder_dim=192, decoder_heads=6, decoder_ffn_dim=768),
    "L": dict(encoder_dim=192, encoder_layers=8, encoder_heads=6,
              decoder_dim=256, decoder_heads=8, decoder_ffn_dim=1024),
}


@dataclass
class ModelConfig:
    size_tag: str = "S"
    patch_size: int = 16
    image_size: int = 640
    encoder_dim: int = 96
    encoder_layers: int = 4
    encoder_heads: int = 3
    window_size: int = 10
    global_attention_layer_indices: tuple = (1, 3)
    decoder_dim: int = 128
    decoder_layers: int = 3
    decoder_heads: int = 4
    decoder_ffn_dim: int = 512
    num_queries: int = 100
    eval_queries: int = 300
    num_groups: int = 4
    text_dim: int = 256
    use_logit_bias: bool = True
    logit_scale_init: float = 20.0
    logit_bias_init: float = -10.0

    def __post_init__(self):
        self.global_attention_layer_indices = tuple(int(i) for i in self.global_attention_layer_indices)
        self.validate()

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid_size ** 2

    @property
    def topk(self) -> int:
        return self.num_queries

    def validate(self):
        if self.size_tag not in SIZE_LADDER:
            raise ConfigError(f"size_tag must be one of {sorted(SIZE_LADDER)}, got {self.size_tag!r}")
        for name in ("patch_size", "image_size", "encoder_dim", "encoder_layers", "encoder_heads",
                     "window_size", "decoder_dim", "decoder_layers", "decoder_heads",
                     "decoder_ffn_dim", "num_queries", "eval_queries", "num_groups", "text_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} is not a multiple of patch_size {self.patch_size}")
        if self.grid_size % self.window_size:
            raise ConfigError(f"token grid {self.grid_size} is not divisible by window_size {self.window_size}")
        if self.encoder_dim % self.encoder_heads or self.decoder_dim % self.decoder_heads:
            raise ConfigError("model dims must be divisible by their head counts")
        if self.decoder_dim % 8:
            raise ConfigError("decoder_dim must be divisible by 8 (box sine embedding)")
        for i in self.global_attention_layer_indices:
            if not 0 <= i < self.encoder_layers:
                raise ConfigError(f"global attention layer index {i} out of range")
        for name in ("num_queries", "eval_queries"):
            if getattr(self, name) > self.num_tokens:
                raise ConfigError(f"{name}={getattr(self, name)} exceeds token count {self.num_tokens}")
        if self.logit_scale_init <= 0:
            raise ConfigError("logit_scale_init must be positive")

    @classmethod
    def from_size(cls, size_tag: str, **overrides) -> "ModelConfig":
        if size_tag not in SIZE_LADDER:
            raise ConfigError(f"unknown size {size_tag!r}")
        layers = SIZE_LADDER[size_tag]["encoder_layers"]
        params = dict(SIZE_LADDER[size_tag], size_tag=size_tag,
                      global_attention_layer_indices=tuple(range(1, layers, 2)))
        params.update(overrides)
        return cls(**params)

    @classmethod
    def desk(cls, size_tag: str = "S", **overrides) -> "ModelConfig":
        """96px inputs, 8px patches: 144 tokens, 3x3 windows of 4x4."""
        if size_tag not in SIZE_LADDER:
            raise ConfigError(f"unknown size {size_tag!r}")
        params = dict(image_size=96, patch_size=8, window_size=4, num_queries=100,
                      eval_queries=100, num_groups=4)
        params["text_dim"] = SIZE_LADDER[size_tag]["decoder_dim"]
        params.update(overrides)
        return cls.from_size(size_tag, **params)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["global_attention_layer_indices"] = list(self.global_attention_layer_indices)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class SourceConfig:
    name: str
    annotations: str
    format: str = "coco"
    weight: float = 1.0
    fraction: float = 1.0


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 12
    batch_size: int = 64
    draws_per_epoch: int | None = None
    grad_clip: float = 0.1
    lr_drop_step: int | None = None   # lr x0.1 from this global step on
    alpha: float = 0.25
    loss_cls: float = 2.0
    loss_l1: float = 5.0
    loss_giou: float = 2.0
    max_vocab: int = 80
    augment: bool = True
    workers: int = 0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sources: list = field(default_factory=list)
    encoder: str = "toy"
    prompt_template: str = "a photo of a {}"
    seed: int = 0
    output_dir: str = "runs/default"
    init_checkpoint: str | None = None

    def validate(self, check_paths: bool = True):
        self.model.validate()
        t = self.train
        if t.lr <= 0:
            raise ConfigError("lr must be > 0")
        if t.weight_decay < 0 or t.epochs < 1 or t.batch_size < 1:
            raise ConfigError("weight_decay >= 0, epochs >= 1 and batch_size >= 1 are required")
        if not 0 < t.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.sources:
            raise ConfigError("at least one data source is required")
        for s in self.sources:
            if s.weight <= 0 or not 0 < s.fraction <= 1:
                raise ConfigError(f"source {s.name!r}: weight must be > 0 and fraction in (0, 1]")
            if check_paths and not Path(s.annotations).exists():
                raise ConfigError(f"source {s.name!r}: annotation file not found: {s.annotations}")
        if not (self.encoder in ("toy", "random") or self.encoder.startswith("file:")):
            raise ConfigError(f"encoder must be toy, random or file:<path>, got {self.encoder!r}")
        if check_paths and self.encoder.startswith("file:") and not Path(self.encoder[5:]).is_file():
            raise ConfigError(f"embedding table not found: {self.encoder[5:]}")
        if check_paths and self.init_checkpoint and not Path(self.init_checkpoint).is_file():
            raise ConfigError(f"init checkpoint not found: {self.init_checkpoint}")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": dataclasses.asdict(self.train),
            "sources": [dataclasses.asdict(s) for s in self.sources],
            "encoder": self.encoder,
            "prompt_template": self.prompt_template,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "init_checkpoint": self.init_checkpoint,
        }

    @classmethod
    def from_dict(cls, d: dict, base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        d = dict(d)
        try:
            model = base.model.to_dict()
            model.update(d.pop("model", {}))
            train = dataclasses.asdict(base.train)
            train.update(d.pop("train", {}))
            sources = [SourceConfig(**s) for s in d.pop("sources", [dataclasses.asdict(s) for s in base.sources])]
            rest = {k: getattr(base, k) for k in ("encoder", "prompt_template", "seed",
                                                   "output_dir", "init_checkpoint")}
            unknown = set(d) - set(rest)
            if unknown:
                raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
            rest.update(d)
            return cls(model=ModelConfig.from_dict(model), train=TrainConfig(**train),
                       sources=sources, **rest)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def preset(name: str) -> RunConfig:
    """``paper-scale``: the published recipe. ``desk-scale``: synthetic-data laptop runs."""
    if name == "paper-scale":
        return RunConfig(
            model=ModelConfig.from_size("S", image_size=640, patch_size=16, window_size=10,
                                        num_queries=300, eval_queries=300, text_dim=256),
            train=TrainConfig(lr=1e-4, weight_decay=1e-4, epochs=12, batch_size=64, max_vocab=80),
            # grounding data 80%, detection data 20% with a fresh 10% subsample each epoch
            sources=[SourceConfig("grounding", "", weight=0.8, fraction=1.0),
                     SourceConfig("detection", "", weight=0.2, fraction=0.1)],
        )
    if name == "desk-scale":
        return RunConfig(
            model=ModelConfig.desk("S"),
            train=TrainConfig(lr=4e-4, weight_decay=1e-4, epochs=20, batch_size=8, max_vocab=16,
                              grad_clip=1.0),
        )
    raise ConfigError(f"unknown preset {name!r} (expected paper-scale or desk-scale)")
