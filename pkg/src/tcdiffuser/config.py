"""Run configuration with a flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .conditioning import parse_flags
from .diffusion import GuidanceConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration key or value."""


@dataclass(frozen=True)
class RunConfig:
    # environment and dataset
    env: str = "prospective"
    n: int = 600
    h: int = 10
    sigma: float = 0.01
    dataset: str = "data/dataset.tcd"
    # diffusion
    K: int = 200
    schedule: str = "cosine"
    omega: float = 1.2
    condition_dropout_p: float = 0.25
    clip_x0: bool = True
    noise_scale: str = "std"
    # windows and training
    L: int = 20
    T_HC: int = 5
    batch_size: int = 32
    lr: float = 2e-4
    train_steps: int = 3000
    ema_decay: float = 0.995
    train_inpaint: bool = True
    mask_history_loss: bool = True
    base_width: int = 32
    dim_mults: tuple[int, ...] = (1, 2, 4)
    kernel_size: int = 5
    log_every: int = 100
    id_epochs: int = 100
    id_lr: float = 2e-4
    # evaluation
    top_y: int = 1
    max_return_offset: float = 0.0
    episodes: int = 20
    gamma: float = 0.99  # kept for reference; return-to-go is undiscounted
    flags: str = "tcd"
    # seeds and paths
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        if self.env not in ("historical", "immediate", "prospective"):
            raise ConfigError(f"unknown env {self.env!r}")
        if not 1 <= self.T_HC < self.L:
            raise ConfigError(f"T_HC={self.T_HC} must satisfy 1 <= T_HC < L={self.L}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.top_y < 1:
            raise ConfigError("top_y must be >= 1")
        if self.omega < 0 or not 0.0 <= self.condition_dropout_p <= 1.0:
            raise ConfigError("omega must be >= 0 and condition_dropout_p in [0, 1]")
        if self.schedule not in ("cosine", "linear"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        try:
            parse_flags(self.flags)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(L=self.L, T_HC=self.T_HC, batch_size=self.batch_size, lr=self.lr,
                           steps=self.train_steps, K=self.K, schedule=self.schedule,
                           condition_dropout_p=self.condition_dropout_p,
                           train_inpaint=self.train_inpaint,
                           mask_history_loss=self.mask_history_loss,
                           base_width=self.base_width, dim_mults=self.dim_mults,
                           kernel_size=self.kernel_size, log_every=self.log_every,
                           ema_decay=self.ema_decay)

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(self.omega, self.condition_dropout_p, self.clip_x0, self.noise_scale)

    # --- text format ---------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return (base or cls()).updated(parse_pairs(text))

    def updated(self, values: dict[str, str]) -> "RunConfig":
        known = {f.name for f in fields(self)}
        changes: dict[str, Any] = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _parse(key, raw, type(getattr(self, key)))
        return dataclasses.replace(self, **changes)


def parse_pairs(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key: str, raw: str, kind: type):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if kind is tuple:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} (expected {kind.__name__})") from None


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return RunConfig.from_text(text)
