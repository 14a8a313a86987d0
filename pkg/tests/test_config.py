# ABOUTME: Unit tests for run configuration resolution and seed derivation.
# ABOUTME: Tests file / environment / flag precedence, validation messages, config hashing, and derived seeds.

import dataclasses

import pytest

from cellgnn.config import (
    KEYS,
    RunConfig,
    apply_settings,
    config_hash,
    derive_seed,
    environment_settings,
    load_config,
)
from cellgnn.dataset import Task
from cellgnn.errors import ConfigError
from cellgnn.technology import Technology


class TestLoadConfig:
    """Tests for layering defaults, config files, environment and flags."""

    def test_defaults(self):
        config = load_config(environ={})
        assert config.technology is Technology.SILICON45
        assert config.tasks == tuple(Task)
        assert config.train_points == 5
        assert config.test_points == 4
        assert config.jobs >= 1

    def test_file_values(self, config_file):
        config = load_config(config_file, environ={})
        assert config.epochs == 10
        assert config.hidden == 16
        assert config.technology is Technology.FLEXIBLE
        assert config.cells == ("INVX1", "NAND2X1")
        assert config.tasks == (Task.DELAY, Task.LEAKAGE)

    def test_environment_beats_file(self, config_file):
        config = load_config(config_file, environ={"CELLGNN_EPOCHS": "20", "HOME": "/root"})
        assert config.epochs == 20
        assert config.hidden == 16

    def test_flags_beat_environment(self, config_file):
        config = load_config(
            config_file,
            overrides={"EPOCHS": "30", "SEED": None},
            environ={"CELLGNN_EPOCHS": "20", "CELLGNN_SEED": "7"},
        )
        assert config.epochs == 30
        assert config.seed == 7

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "none.cfg", environ={})

    def test_unknown_key_in_file(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("EPOCS=10\n")
        with pytest.raises(ConfigError, match="unknown config key 'EPOCS'"):
            load_config(path, environ={})

    def test_unparsable_value(self):
        with pytest.raises(ConfigError, match="EPOCHS has an invalid value 'ten'"):
            load_config(overrides={"EPOCHS": "ten"}, environ={})

    def test_unknown_task_and_technology(self):
        with pytest.raises(ConfigError, match="unknown task 'timing'"):
            load_config(overrides={"TASKS": "delay,timing"}, environ={})
        with pytest.raises(ConfigError, match="unknown technology"):
            load_config(overrides={"TECHNOLOGY": "gaas"}, environ={})

    def test_keys_are_case_insensitive(self):
        config = apply_settings(RunConfig(), {"lr": "0.01"}, "test")
        assert config.lr == 0.01


class TestValidation:
    """Tests for the per-key range checks."""

    @pytest.mark.parametrize("key,value,message", [
        ("TRAIN_POINTS", "1", "TRAIN_POINTS must be at least 2"),
        ("N_LOAD", "0", "N_LOAD must be at least 2"),
        ("EPOCHS", "0", "EPOCHS must be positive"),
        ("JOBS", "-1", "JOBS must be positive"),
        ("LR", "0", "LR must be positive"),
        ("SEED", "-3", "SEED must be non-negative"),
        ("TASKS", ",", "TASKS is empty"),
    ])
    def test_rejects(self, key, value, message):
        with pytest.raises(ConfigError, match=message):
            load_config(overrides={key: value}, environ={})

    def test_config_error_is_value_error(self):
        with pytest.raises(ValueError):
            RunConfig(hidden=0).validate()


class TestEnvironment:
    """Tests for CELLGNN_ variable collection."""

    def test_prefix_stripped_and_unknown_ignored(self):
        settings = environment_settings({"CELLGNN_SEED": "4", "CELLGNN_COLOR": "red", "SEED": "9"})
        assert settings == {"SEED": "4"}

    def test_every_key_reachable(self):
        assert "TECHNOLOGY" in KEYS
        assert "LIB_LOAD_POINTS" in KEYS
        assert len(KEYS) == len(dataclasses.fields(RunConfig))


class TestHashing:
    """Tests for the configuration fingerprint and derived seeds."""

    def test_hash_is_stable(self):
        assert config_hash(RunConfig(jobs=1)) == config_hash(RunConfig(jobs=1))
        assert len(config_hash(RunConfig(jobs=1))) == 64

    def test_scheduling_keys_do_not_change_hash(self):
        base = RunConfig(jobs=1)
        assert config_hash(dataclasses.replace(base, jobs=8, out="elsewhere")) == config_hash(base)

    def test_output_keys_change_hash(self):
        base = RunConfig(jobs=1)
        assert config_hash(dataclasses.replace(base, seed=1)) != config_hash(base)
        assert config_hash(dataclasses.replace(base, tasks=(Task.DELAY,))) != config_hash(base)

    def test_fingerprint_text(self):
        fingerprint = RunConfig(tasks=(Task.DELAY, Task.LEAKAGE), cells=("INVX1",)).fingerprint()
        assert fingerprint["TASKS"] == "delay,leakage"
        assert fingerprint["CELLS"] == "INVX1"
        assert fingerprint["TECHNOLOGY"] == "silicon45"
        assert "JOBS" not in fingerprint

    def test_derived_seeds(self):
        """Seeds depend only on (seed, name) and differ between consumers."""
        assert derive_seed(0, "train/delay") == derive_seed(0, "train/delay")
        assert derive_seed(0, "train/delay") != derive_seed(0, "train/leakage")
        assert derive_seed(0, "train/delay") != derive_seed(1, "train/delay")
        assert 0 <= derive_seed(123, "split/delay") < 2 ** 32

    def test_train_config_uses_derived_seed(self):
        config = RunConfig(seed=5, epochs=3, hidden=8)
        train_config = config.train_config(Task.CAPACITANCE)
        assert train_config.seed == derive_seed(5, "train/capacitance")
        assert train_config.epochs == 3
        assert train_config.hidden == 8


@pytest.fixture
def config_file(tmp_path):
    """Small key=value file with a comment line."""
    path = tmp_path / "run.cfg"
    path.write_text(
        "# quick run\n"
        "TECHNOLOGY=flexible\n"
        "EPOCHS=10\n"
        "HIDDEN=16\n"
        "CELLS=INVX1, NAND2X1\n"
        "TASKS=delay,leakage\n"
    )
    return path
