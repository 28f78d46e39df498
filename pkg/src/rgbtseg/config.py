"""Run configuration: nested sections read from ``section.key=value`` lines."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .model import Ablation, ModelConfig
from .objective import LossWeights
from .simdata import SceneConfig


class ConfigError(ValueError):
    pass


@dataclass
class LossConfig(LossWeights):
    full_resolution: bool = True    # OHEM on logits upsampled to label size
    tau: float = 0.07
    pool_kernel: int = 8

    def weights(self) -> LossWeights:
        names = [f.name for f in dataclasses.fields(LossWeights)]
        return LossWeights(**{n: getattr(self, n) for n in names})


@dataclass
class DataConfig:
    dataset_dir: str = ""           # empty: generate the train split on the fly
    val_dir: str = ""
    train_size: int = 256
    val_size: int = 64
    image_size: int = 64
    max_offset_px: int = 6
    tail_exponent: float = 1.8
    illum_probs: tuple[float, ...] = (0.5, 0.3, 0.2)
    seed: int = 0
    min_objects: int = 3
    max_objects: int = 8

    def scene(self, num_classes: int) -> SceneConfig:
        return SceneConfig(self.image_size, num_classes, self.max_offset_px, self.tail_exponent,
                           tuple(self.illum_probs), self.seed, self.min_objects, self.max_objects)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    poly_power: float = 0.9
    warmup_steps: int = 100
    max_steps: int = 2000
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"
    checkpoint_every: int = 0       # 0: only the final checkpoint
    head_n: int = 2
    tail_n: int = 3
    figures: bool = True


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    ablation: Ablation = field(default_factory=Ablation)
    run: RunSection = field(default_factory=RunSection)

    SECTIONS = ("model", "loss", "data", "optim", "ablation", "run")

    def validate(self) -> "RunConfig":
        try:
            self.model.__post_init__()
            self.loss.__post_init__()
            self.data.scene(self.model.num_classes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        o = self.optim
        if o.max_steps < 0 or o.batch_size < 1 or o.warmup_steps < 0 or o.lr < 0:
            raise ConfigError("optim: max_steps, warmup_steps, lr must be >= 0 and batch_size >= 1")
        if self.model.embed_dim % self.model.heads:
            raise ConfigError(f"model.embed_dim={self.model.embed_dim} not divisible by heads")
        if not 0.0 <= self.model.gamma <= 1.0:
            raise ConfigError(f"model.gamma must lie in [0, 1], got {self.model.gamma}")
        if self.model.norm not in ("batch", "group"):
            raise ConfigError(f"model.norm must be batch or group, got {self.model.norm!r}")
        if self.data.train_size < 1:
            raise ConfigError("data.train_size must be positive")
        return self

    def set(self, key: str, value: str) -> None:
        section, _, name = key.partition(".")
        if section not in self.SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r} (expected section.key)")
        obj = getattr(self, section)
        types = {f.name: f for f in dataclasses.fields(obj)}
        if name not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, name, _convert(getattr(obj, name), value.strip(), key))

    def to_text(self) -> str:
        lines = []
        for section in self.SECTIONS:
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                lines.append(f"{section}.{f.name}={_render(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    def copy(self) -> "RunConfig":
        return parse_config(self.to_text())


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_render(x) for x in v)
    return str(v)


_TRUE, _FALSE = {"1", "true", "yes", "on"}, {"0", "false", "no", "off"}


def _convert(default, text: str, key: str):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in text.split(",") if x.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def parse_config(text: str, overrides: Iterable[str] = (), source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected section.key=value, got {raw!r}")
        key, _, value = line.partition("=")
        try:
            cfg.set(key.strip(), value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{n}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg.set(key.strip(), value)
    return cfg.validate()


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> RunConfig:
    if path is None:
        return parse_config("", overrides)
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, overrides, str(p))
