# ABOUTME: Run configuration: defaults, key=value config files, CELLGNN_ environment overrides, and flags.
# ABOUTME: Also derives every module-level seed from the single top-level seed.

import hashlib
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from dotenv import dotenv_values, load_dotenv

from cellgnn.dataset import Task
from cellgnn.errors import ConfigError
from cellgnn.gnn import TrainConfig
from cellgnn.technology import Technology

logger = logging.getLogger(__name__)

ENV_PREFIX = "CELLGNN_"

# Keys that change how work is scheduled or where it lands, never what it produces.
_UNHASHED = ("JOBS", "OUT")


@dataclass(frozen=True)
class RunConfig:
    """
    Everything a command needs to reproduce its outputs.

    Attributes:
        technology: Technology tag.
        catalog: 'default' or a directory of .sp cell files.
        cells: Comma-separated catalog subset; empty keeps every cell.
        train_points: Corner grid points per axis for training.
        test_points: Corner grid points per axis for testing.
        n_slew: Stimulus slew points.
        n_load: Stimulus load points.
        tasks: Tasks to build and train.
        epochs: Training epochs.
        batch_size: Minibatch size.
        lr: Initial learning rate.
        lr_halving_period: Epochs between learning-rate halvings.
        valid_interval: Epochs between validation passes.
        hidden: Hidden width of the models.
        seed: Top-level seed; module seeds are derived from it.
        jobs: Worker count.
        out: Output directory.
        preset: Oracle constants preset name or file; empty uses the technology preset.
        lib_slew_points: Slew breakpoints of emitted libraries.
        lib_load_points: Load breakpoints of emitted libraries.
    """

    technology: Technology = Technology.SILICON45
    catalog: str = "default"
    cells: Tuple[str, ...] = ()
    train_points: int = 5
    test_points: int = 4
    n_slew: int = 4
    n_load: int = 4
    tasks: Tuple[Task, ...] = tuple(Task)
    epochs: int = 5000
    batch_size: int = 512
    lr: float = 1e-4
    lr_halving_period: int = 500
    valid_interval: int = 10
    hidden: int = 128
    seed: int = 0
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)
    out: str = "out"
    preset: str = ""
    lib_slew_points: int = 4
    lib_load_points: int = 4

    def validate(self) -> "RunConfig":
        """
        Check every field against the preconditions of the modules it feeds.

        Raises:
            ConfigError: Naming the first offending key.
        """
        for key in ("train_points", "test_points", "n_slew", "n_load", "lib_slew_points", "lib_load_points"):
            if getattr(self, key) < 2:
                raise ConfigError(f"{key.upper()} must be at least 2, got {getattr(self, key)}")
        for key in ("epochs", "batch_size", "lr_halving_period", "valid_interval", "hidden", "jobs"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key.upper()} must be positive, got {getattr(self, key)}")
        if self.lr <= 0:
            raise ConfigError(f"LR must be positive, got {self.lr}")
        if self.seed < 0:
            raise ConfigError(f"SEED must be non-negative, got {self.seed}")
        if not self.tasks:
            raise ConfigError("TASKS is empty")
        return self

    def train_config(self, task: Task) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr0=self.lr,
            lr_halving_period=self.lr_halving_period,
            seed=derive_seed(self.seed, f"train/{task.value}"),
            valid_interval=self.valid_interval,
            hidden=self.hidden,
        )

    def canonical(self) -> Dict[str, str]:
        """KEY -> text form of every field."""
        return {f.name.upper(): _format(getattr(self, f.name)) for f in fields(self)}

    def fingerprint(self) -> Dict[str, str]:
        """Canonical listing without the scheduling-only keys."""
        return {k: v for k, v in self.canonical().items() if k not in _UNHASHED}

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def _format(value) -> str:
    if isinstance(value, Technology):
        return value.value
    if isinstance(value, tuple):
        return ",".join(v.value if isinstance(v, Task) else str(v) for v in value)
    return str(value)


def _split(text: str) -> Tuple[str, ...]:
    return tuple(item.strip() for item in text.split(",") if item.strip())


def _convert(key: str, text: str):
    name = key.lower()
    try:
        if name == "technology":
            return Technology.parse(text)
        if name == "tasks":
            return tuple(Task.parse(t) for t in _split(text))
        if name == "cells":
            return _split(text)
        if name == "lr":
            return float(text)
        if name in ("catalog", "out", "preset"):
            return text
        return int(text)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key} has an invalid value '{text}'")


KEYS = tuple(f.name.upper() for f in fields(RunConfig))


def apply_settings(config: RunConfig, settings: Mapping[str, Optional[str]], origin: str) -> RunConfig:
    """
    Layer KEY=value settings over a config.

    Raises:
        ConfigError: On unknown keys or unparsable values.
    """
    updates = {}
    for key, text in settings.items():
        upper = key.upper()
        if upper not in KEYS:
            raise ConfigError(f"{origin}: unknown config key '{key}'")
        if text is None:
            raise ConfigError(f"{origin}: config key '{key}' has no value")
        updates[upper.lower()] = _convert(upper, text.strip())
    return replace(config, **updates)


def environment_settings(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """CELLGNN_<KEY> variables with the prefix removed."""
    environ = os.environ if environ is None else environ
    return {
        name[len(ENV_PREFIX):]: value
        for name, value in environ.items()
        if name.startswith(ENV_PREFIX) and name[len(ENV_PREFIX):] in KEYS
    }


def load_config(
    path: "str | Path | None" = None,
    overrides: Optional[Mapping[str, Optional[str]]] = None,
    environ: Optional[Mapping[str, str]] = None,
    dotenv: bool = True,
) -> RunConfig:
    """
    Resolve a RunConfig from defaults, a config file, the environment and flags.

    Args:
        path: Optional key=value config file.
        overrides: Flag values keyed by config KEY; None entries are skipped.
        environ: Environment mapping; os.environ when omitted.
        dotenv: Load a .env file into the environment first.

    Returns:
        Validated RunConfig.

    Raises:
        ConfigError: Missing file, unknown keys, bad values or failed validation.
    """
    if dotenv and environ is None:
        load_dotenv()
    config = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        config = apply_settings(config, dotenv_values(path), str(path))
    config = apply_settings(config, environment_settings(environ), "environment")
    if overrides:
        config = apply_settings(config, {k: v for k, v in overrides.items() if v is not None}, "flags")
    return config.validate()


def config_hash(config: RunConfig) -> str:
    """SHA-256 over the sorted KEY=value listing of the output-affecting keys."""
    items = sorted(config.fingerprint().items())
    listing = "\n".join(f"{key}={value}" for key, value in items)
    return hashlib.sha256(listing.encode("utf-8")).hexdigest()


def derive_seed(seed: int, name: str) -> int:
    """
    Seed for one named consumer, derived from the top-level seed.

    The name is hashed into a spawn key of a numpy SeedSequence, so every
    consumer gets an independent stream that depends only on (seed, name).
    """
    key = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")
    sequence = np.random.SeedSequence(seed, spawn_key=(key,))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])
