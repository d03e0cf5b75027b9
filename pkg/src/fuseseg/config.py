"""Network and training configuration plus the flat config-file format.

Config files are plain text, one `key = value` per line. Blank lines and
lines starting with '#' are skipped. Unknown keys are rejected so typos
fail loudly instead of silently training with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

MODALITY_NAMES = ("FLAIR", "T1", "T1c", "T2")


@dataclass
class NetworkConfig:
    """Architecture hyperparameters; defaults are the desk-scale setup."""

    modalities: int = 4
    classes: int = 4
    stages: int = 4
    base_channels: int = 4
    appearance_dim: int = 8
    patch: int = 32
    leaky_slope: float = 0.01
    dropout_prob: float = 0.5
    fusion_mode: str = "gated"
    disentangle: bool = True

    def validate(self) -> "NetworkConfig":
        if self.modalities < 1:
            raise ConfigError(f"modalities must be >= 1, got {self.modalities}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.appearance_dim < 1:
            raise ConfigError(f"appearance_dim must be >= 1, got {self.appearance_dim}")
        if self.patch < 1 or self.patch % (1 << self.stages):
            raise ConfigError(
                f"patch must be divisible by 2^stages = {1 << self.stages}, "
                f"got {self.patch}")
        if not 0 < self.leaky_slope < 1:
            raise ConfigError(f"leaky_slope must be in (0,1), got {self.leaky_slope}")
        if not 0 <= self.dropout_prob < 1:
            raise ConfigError(f"dropout_prob must be in [0,1), got {self.dropout_prob}")
        if self.fusion_mode not in ("gated", "average"):
            raise ConfigError(f"fusion_mode must be gated or average, got "
                              f"{self.fusion_mode!r}")
        return self

    def stage_channels(self, s: int) -> int:
        return self.base_channels << s


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    max_epoch: int = 10
    batch_size: int = 1
    poly_power: float = 0.9
    lam: float = 0.1
    beta: float = 0.1
    seed: int = 0
    train_manifest: str = ""
    eval_manifest: str = ""
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def validate(self) -> "TrainConfig":
        if self.batch_size != 1:
            raise ConfigError(f"batch_size must be 1, got {self.batch_size}")
        if self.max_epoch < 1:
            raise ConfigError(f"max_epoch must be >= 1, got {self.max_epoch}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lam < 0 or self.beta < 0:
            raise ConfigError("lambda and beta must be >= 0")
        self.network.validate()
        return self


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key {key!r} expects a boolean, got {raw!r}")


# config-file key -> (dataclass owning it, attribute name)
_NETWORK_KEYS = {f.name: f for f in fields(NetworkConfig)}
_TRAIN_KEYS = {f.name: f for f in fields(TrainConfig) if f.name != "network"}
_ALIASES = {"lambda": "lam"}


def parse_config_text(text: str, source: str = "<config>") -> TrainConfig:
    net = NetworkConfig()
    train = TrainConfig(network=net)
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        key = _ALIASES.get(key, key)
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        if key in _NETWORK_KEYS:
            target, spec = net, _NETWORK_KEYS[key]
        elif key in _TRAIN_KEYS:
            target, spec = train, _TRAIN_KEYS[key]
        else:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        kind = spec.type if isinstance(spec.type, type) else str(spec.type)
        try:
            if kind in (bool, "bool"):
                value = _parse_bool(raw, key)
            elif kind in (int, "int"):
                value = int(raw)
            elif kind in (float, "float"):
                value = float(raw)
            else:
                value = raw
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {raw!r}") from exc
        setattr(target, spec.name, value)
    return train.validate()


def load_config(path: str | Path) -> TrainConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), source=str(p))


def format_config(cfg: TrainConfig) -> str:
    """Render a TrainConfig back to the flat file format (round-trippable)."""
    lines = []
    for spec in fields(TrainConfig):
        if spec.name == "network":
            continue
        key = "lambda" if spec.name == "lam" else spec.name
        lines.append(f"{key} = {getattr(cfg, spec.name)}")
    for spec in fields(NetworkConfig):
        lines.append(f"{spec.name} = {getattr(cfg.network, spec.name)}")
    return "\n".join(lines) + "\n"
