"""Experiment configuration: flat key=value files, flag overrides, snapshots.

Precedence: built-in defaults < config file < command-line flags. The
FEDFORGE_SEED environment variable, when set, overrides the master seed
last. A written snapshot parses back to the identical configuration, so any
run can be reproduced from its snapshot alone.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .datagen import NUM_ARTIFACT_TYPES

SEED_ENV_VAR = "FEDFORGE_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    protocol: str = "hybrid"
    holdout_type: int | None = None
    clients: int = 10
    local_epochs: int = 1
    rounds: int = 10
    learning_rate: float = 0.01
    momentum: float = 0.5
    batch_size: int = 32
    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0
    alpha: float = 1.0
    beta: float = 4.0
    codebook_size: int = 32
    codebook_dim: int = 16
    partition: str = "iid"
    train_size: int = 2000
    test_size: int = 600
    seed: int = 0
    out_dir: str = "out"

    def validate(self) -> "ExperimentConfig":
        if self.protocol not in ("hybrid", "generalized"):
            raise ConfigError(f"protocol must be hybrid or generalized, got '{self.protocol}'")
        if self.partition not in ("iid", "per_artifact"):
            raise ConfigError(f"partition must be iid or per_artifact, got '{self.partition}'")
        if self.protocol == "generalized":
            if self.holdout_type is None:
                raise ConfigError("holdout_type is required when protocol=generalized")
            if not 0 <= self.holdout_type < NUM_ARTIFACT_TYPES:
                raise ConfigError(
                    f"holdout_type must be in [0, {NUM_ARTIFACT_TYPES}), got {self.holdout_type}")
        elif self.holdout_type is not None:
            raise ConfigError("holdout_type is only valid when protocol=generalized")
        for name in ("clients", "local_epochs", "batch_size", "codebook_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.codebook_size < 2:
            raise ConfigError(f"codebook_size must be >= 2, got {self.codebook_size}")
        for name in ("learning_rate", "momentum", "mu1", "mu2", "mu3", "alpha", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        for name in ("train_size", "test_size"):
            v = getattr(self, name)
            if v < 2 or v % 2:
                raise ConfigError(f"{name} must be even and >= 2, got {v}")
        if self.clients > self.train_size:
            raise ConfigError(
                f"clients ({self.clients}) cannot exceed train_size ({self.train_size})")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_STR_FIELDS = {"protocol", "partition", "out_dir"}
_FLOAT_FIELDS = {"learning_rate", "momentum", "mu1", "mu2", "mu3", "alpha", "beta"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "holdout_type":
        if raw.lower() in ("none", ""):
            return None
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"holdout_type must be an integer or 'none', got '{raw}'")
    if key in _STR_FIELDS:
        return raw
    kind = float if key in _FLOAT_FIELDS else int
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key} must be a {kind.__name__}, got '{raw}'")


def read_config_file(path: str | Path) -> dict:
    """Parse a flat key=value file; '#' starts a comment, unknown keys reject."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{line.strip()}'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        values[key] = _parse_value(key, raw)
    return values


def parse_config(path: str | Path | None = None,
                 overrides: dict | None = None) -> ExperimentConfig:
    """Resolve file values, flag overrides and the seed env var into a config."""
    values: dict = {}
    if path is not None:
        values.update(read_config_file(path))
    if overrides:
        for key, value in overrides.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key '{key}'")
            if value is not None:
                values[key] = value
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{env_seed}'")
    return ExperimentConfig(**values).validate()


def snapshot(cfg: ExperimentConfig) -> str:
    """Serialize the exact effective configuration; parses back losslessly."""
    lines = ["# fedforge config snapshot v1"]
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if value is None:
            value = "none"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
