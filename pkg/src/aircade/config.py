"""Model and training configuration, plus the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    T: int = 24
    T_P: int = 24
    N: int = 184
    c: int = 1
    f: int = 13
    d_s: int = 32
    d_P: int = 16
    d_e: int = 10
    K_h: int = 8
    L1: int = 3
    L2: int = 3
    N_T: int = 8
    attention_scale_mode: str = "divide"
    renormalize_masks: bool = False
    init_seed: int = 0
    no_prompt: bool = False
    no_adp: bool = False
    no_agg: bool = False
    no_diff: bool = False
    no_cade: bool = False
    no_es: bool = False

    @property
    def d_m(self) -> int:
        return self.d_s + 2 * self.d_P

    @property
    def d_h(self) -> int:
        return self.d_m // 4

    def validate(self) -> None:
        for name in ("T", "T_P", "N", "c", "f", "d_s", "d_P", "d_e", "K_h", "N_T"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.L1 < 0 or self.L2 < 0 or self.L1 + self.L2 == 0:
            raise ConfigError("need at least one component (L1 + L2 >= 1)")
        if self.T != self.T_P:
            raise ConfigError(
                f"T ({self.T}) must equal T_P ({self.T_P}): the decoder attends the "
                "encoder output along the time axis"
            )
        if self.d_m % 4:
            raise ConfigError(f"d_m = d_s + 2*d_P = {self.d_m} must be divisible by 4")
        if self.attention_scale_mode not in ("divide", "multiply"):
            raise ConfigError(f"attention_scale_mode must be divide|multiply, got {self.attention_scale_mode!r}")
        if self.no_cade and self.no_es:
            raise ConfigError("no_cade and no_es together leave no layers")
        if self.no_adp and self.no_diff:
            raise ConfigError("no_adp and no_diff together remove every attention path")


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 50
    max_steps: int = 0  # 0 = unlimited
    early_stop_patience: int = 10
    beta: float = 1.0
    K: int = 3
    keep_prob: float = 0.9
    resample_masks_every_epoch: bool = False
    noise_sigma: float = 1.0
    stride: int = 1
    train_ratio: float = 0.6
    val_ratio: float = 0.2
    seed: int = 0
    no_intv: bool = False

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError("keep_prob must be in (0, 1]")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if not 0.0 < self.train_ratio <= 1.0 or self.val_ratio < 0:
            raise ConfigError("invalid split ratios")
        if self.train_ratio + self.val_ratio > 1.0 + 1e-12:
            raise ConfigError("train_ratio + val_ratio exceeds 1")


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(cls, key: str, raw: str) -> Any:
    kind = {f.name: f.type for f in fields(cls)}[key]
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            return _BOOL[raw.strip().lower()]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None
    return raw.strip()


def apply_overrides(
    model: ModelConfig, train: TrainConfig, items: dict[str, str]
) -> tuple[ModelConfig, TrainConfig]:
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    m_upd, t_upd = {}, {}
    for key, raw in items.items():
        if key in model_keys:
            m_upd[key] = _coerce(ModelConfig, key, raw)
        elif key in train_keys:
            t_upd[key] = _coerce(TrainConfig, key, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return dataclasses.replace(model, **m_upd), dataclasses.replace(train, **t_upd)


def parse_config_text(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        items[key] = value
    return items


def load_config(
    path: str | Path | None, overrides: dict[str, str] | None = None
) -> tuple[ModelConfig, TrainConfig]:
    items = {}
    if path is not None:
        items.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    items.update(overrides or {})
    model, train = apply_overrides(ModelConfig(), TrainConfig(), items)
    model.validate()
    train.validate()
    return model, train


def format_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    lines = [f"{k} = {str(v).lower() if isinstance(v, bool) else v}"
             for k, v in dataclasses.asdict(model).items()]
    if train is not None:
        lines += [f"{k} = {str(v).lower() if isinstance(v, bool) else v}"
                  for k, v in dataclasses.asdict(train).items()]
    return "\n".join(lines) + "\n"


def config_digest(model: ModelConfig, train: TrainConfig | None = None) -> str:
    payload = {"model": dataclasses.asdict(model)}
    if train is not None:
        payload["train"] = dataclasses.asdict(train)
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
