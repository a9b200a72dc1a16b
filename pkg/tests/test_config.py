from __future__ import annotations

from pathlib import Path

import pytest
from pydantic import ValidationError

from wormhole_heat import config


def _clear_numeric_env(monkeypatch):
    for key in ("SOLVER_TOL", "DENSE_CUTOFF", "DOMINANCE_POLICY", "SNAPSHOT_FORMATS", "OUTPUT_DIR"):
        monkeypatch.delenv(key, raising=False)
        monkeypatch.delenv(f"WORMHOLE_{key}", raising=False)


def test_defaults_apply_without_environment(monkeypatch):
    _clear_numeric_env(monkeypatch)

    fresh = config.Settings()

    assert fresh.solver_tol == config.DEFAULT_SOLVER_TOL
    assert fresh.dense_cutoff == config.DEFAULT_DENSE_CUTOFF
    assert fresh.dominance_policy == "raise"
    assert fresh.snapshot_formats == ["csv", "vtk"]
    assert fresh.output_dir == Path("output")


def test_blank_values_are_treated_as_missing(monkeypatch):
    _clear_numeric_env(monkeypatch)
    monkeypatch.setenv("SOLVER_TOL", " ")
    monkeypatch.setenv("DENSE_CUTOFF", "")

    fresh = config.Settings()

    assert fresh.solver_tol == config.DEFAULT_SOLVER_TOL
    assert fresh.dense_cutoff == config.DEFAULT_DENSE_CUTOFF


def test_env_helper_prefers_prefixed_values(monkeypatch):
    monkeypatch.setenv("WORMHOLE_EXAMPLE", "from-prefix")
    monkeypatch.setenv("EXAMPLE", "from-direct")

    assert config._env("EXAMPLE") == "from-prefix"
    assert config._env("MISSING_SETTING", "fallback") == "fallback"

    monkeypatch.setenv("WORMHOLE_EXAMPLE", "")
    assert config._env("EXAMPLE") == "from-direct"


def test_invalid_numbers_fall_back_with_warning(monkeypatch, caplog):
    _clear_numeric_env(monkeypatch)
    monkeypatch.setenv("WORMHOLE_SOLVER_TOL", "tight")

    with caplog.at_level("WARNING"):
        fresh = config.Settings()

    assert fresh.solver_tol == config.DEFAULT_SOLVER_TOL
    assert any("falling back to default" in message for message in caplog.messages)


def test_invalid_policy_and_formats_are_rejected(monkeypatch):
    _clear_numeric_env(monkeypatch)
    monkeypatch.setenv("WORMHOLE_DOMINANCE_POLICY", "ignore")

    with pytest.raises(ValidationError):
        config.Settings()

    monkeypatch.setenv("WORMHOLE_DOMINANCE_POLICY", "warn")
    monkeypatch.setenv("WORMHOLE_SNAPSHOT_FORMATS", "csv,hdf5")
    with pytest.raises(ValidationError):
        config.Settings()


def test_reload_from_environment_updates_shared_settings(monkeypatch):
    _clear_numeric_env(monkeypatch)
    settings = config.Settings()
    monkeypatch.setenv("WORMHOLE_DENSE_CUTOFF", "16")

    settings.reload_from_environment()

    assert settings.dense_cutoff == 16
    assert settings.max_iterations(100) == settings.max_iter_factor * 100
    assert settings.describe()["output_dir"] == "output"
