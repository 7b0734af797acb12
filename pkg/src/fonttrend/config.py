"""Run configuration stored as a flat ``key = value`` text file.

Defaults are the full-scale training setup.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .data import BASE_YEAR, DEFAULT_QUOTA, DEFAULT_SPLITS, YEAR_SPAN
from .features.bovw import BovwNorm
from .losses import TUKEY_C
from .models import DEFAULT_CHANNELS, DEFAULT_DROPOUT, DEFAULT_HIDDEN
from .trainer import Regimen, TrainConfig


class Method(str, enum.Enum):
    IMAGE = "IMAGE"
    SHAPE = "SHAPE"
    FEATURE = "FEATURE"
    LINEAR = "LINEAR"
    CONSTANT = "CONSTANT"


NEURAL_METHODS = (Method.IMAGE, Method.SHAPE, Method.FEATURE)
BASELINES = (Method.LINEAR, Method.CONSTANT)
NO_LOSS = "NONE"
LOSSES = tuple(r.value for r in Regimen)


class ConfigError(ValueError):
    """Invalid run configuration (a usage error at the command line)."""


def _parse_none_int(v: str) -> int | None:
    return None if v.strip().lower() in ("none", "inf", "") else int(v)


def _parse_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace("/", ",").split(",") if x.strip())


@dataclass
class RunConfig:
    method: str = Method.IMAGE.value
    loss: str = Regimen.MSE_TUKEY.value
    # trainer
    epochs: int = 3000
    batch_size: int = 128
    learning_rate: float = 1e-4
    patience: int | None = 50
    forced_switch: int | None = 450
    switch_delay: int = 0
    seed: int = 0
    tukey_c: float = TUKEY_C
    mad_scaling: bool = True
    reset_optimizer: bool = True
    # architecture
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    dropout: float = DEFAULT_DROPOUT
    # features
    k: int = 128
    max_keypoints: int = 500
    bovw_norm: str = BovwNorm.RAW.value
    contrast_threshold: float = 0.03
    codebook_seed: int = 0
    crop: bool = False
    # data
    base_year: int = BASE_YEAR
    span: int = YEAR_SPAN
    quota: int = DEFAULT_QUOTA
    split_counts: tuple[int, ...] = field(default=DEFAULT_SPLITS)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            method = Method(str(self.method).upper())
        except ValueError:
            raise ConfigError(f"unknown method {self.method!r}") from None
        self.method = method.value
        self.loss = str(self.loss).upper()
        if method in BASELINES:
            if self.loss != NO_LOSS:
                raise ConfigError(f"baseline {method.value} takes no loss (use loss=NONE), got {self.loss}")
        elif self.loss not in LOSSES:
            raise ConfigError(f"method {method.value} needs a loss in {', '.join(LOSSES)}, got {self.loss}")
        self.bovw_norm = BovwNorm(str(self.bovw_norm).upper()).value
        self.channels = tuple(self.channels)
        self.hidden = tuple(self.hidden)
        self.split_counts = tuple(self.split_counts)
        for name in ("epochs", "batch_size", "k", "max_keypoints", "quota"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if len(self.split_counts) != 3 or sum(self.split_counts) != self.quota:
            raise ConfigError(f"split_counts {self.split_counts} must be three counts summing to quota {self.quota}")
        if method in NEURAL_METHODS:
            try:
                self.train_config()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    @property
    def method_enum(self) -> Method:
        return Method(self.method)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            regimen=Regimen(self.loss),
            tukey_c=self.tukey_c,
            mad_scaling=self.mad_scaling,
            patience=self.patience,
            forced_switch_epoch=self.forced_switch,
            switch_delay=self.switch_delay,
            seed=self.seed,
            reset_optimizer_on_switch=self.reset_optimizer,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- text form ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, float):
                v = repr(v)
            elif v is None:
                v = "none"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def run_name(self) -> str:
        return f"{self.method}-{self.loss}-{self.hash()[:12]}"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_mapping(cls, values: dict[str, Any], base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        known = {f.name: f for f in fields(cls)}
        kwargs = dataclasses.asdict(base)
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, getattr(base, key))
        return cls(**kwargs)

    @classmethod
    def read(cls, path: str | Path, base: "RunConfig | None" = None) -> "RunConfig":
        values = {}
        for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return cls.from_mapping(values, base)


_NONE_INT = {"patience", "forced_switch"}
_TUPLES = {"channels", "hidden", "split_counts"}


def _coerce(key: str, raw: Any, default: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    try:
        if key in _NONE_INT:
            return _parse_none_int(raw)
        if key in _TUPLES:
            return _parse_ints(raw)
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw
