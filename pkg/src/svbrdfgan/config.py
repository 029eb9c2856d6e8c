"""Training configuration and the ``key = value`` config-file format."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    patch_size: int = 256
    lr: float = 2e-5
    iterations_stage1: int = 10000
    iterations_stage2: int = 15000
    iterations_single_stage: int = 20000
    nr_steps: int = 5
    pdp_steps: int = 1
    lambda_diffuse: float = 1.0
    intensity: float = math.pi
    camera_height: float = 1.0
    direction_mode: str = "point"
    optimizer: str = "adam"
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    d_lr: float | None = None
    base_channels: int = 64
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 1000
    checkpoint_dir: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.nr_steps < 1 or self.pdp_steps < 1:
            raise ConfigError("nr_steps and pdp_steps must be >= 1")
        for name in ("iterations_stage1", "iterations_stage2", "iterations_single_stage"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.patch_size < 32 or self.patch_size % 32:
            raise ConfigError("patch_size must be a multiple of 32, at least 32")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.direction_mode not in ("point", "distant"):
            raise ConfigError("direction_mode must be 'point' or 'distant'")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.intensity <= 0 or self.camera_height <= 0:
            raise ConfigError("intensity and camera_height must be positive")

    @property
    def discriminator_lr(self) -> float:
        return self.lr if self.d_lr is None else self.d_lr

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def field_types(cls) -> dict[str, Any]:
    return {f.name: f.type for f in fields(cls)}


def coerce(value: str, type_name: str) -> Any:
    """Parse a config-file string according to a dataclass field annotation."""
    t = str(type_name)
    if value.lower() in ("none", "null", "") and "None" in t:
        return None
    if t.startswith("bool"):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if t.startswith("int"):
        return int(value)
    if t.startswith("float"):
        return float(value)
    return value


def parse_config_text(text: str, known: dict[str, Any], source: str = "<config>") -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = coerce(value, known[key])
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return out


def load_config_file(path: str | Path, known: dict[str, Any]) -> dict[str, Any]:
    path = Path(path)
    return parse_config_text(path.read_text(), known, str(path))


def dump_config(values: dict[str, Any], path: str | Path) -> None:
    lines = [f"{k} = {'none' if v is None else v}" for k, v in sorted(values.items())]
    Path(path).write_text("\n".join(lines) + "\n")
