"""
Pytest configuration and shared fixtures.
"""
from typing import Callable

import numpy as np
import pytest
import yaml

from blockout.config import get_settings
from blockout.data import Dataset, generate_hierarchical
from blockout.tensor_core import RngStream


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch):
    """Start every test without BLOCKOUT_* overrides and with a fresh settings cache."""
    for name in ("BLOCKOUT_SEED", "BLOCKOUT_LOG_LEVEL", "BLOCKOUT_LOG_FORMAT", "BLOCKOUT_EVAL_WORKERS"):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng() -> RngStream:
    return RngStream(1234)


@pytest.fixture
def small_dataset() -> Dataset:
    """2 superclasses x 2 subclasses, dim 6, 10 examples per class."""
    return generate_hierarchical(
        seed=7, superclasses=2, subclasses_per=2, dim=6, per_class=10, intra_spread=0.5, inter_spread=4.0
    )


@pytest.fixture
def finite_difference() -> Callable:
    """Central finite-difference gradient of a scalar function with respect to an array, in place."""

    def gradient(loss: Callable[[], float], array: np.ndarray, eps: float = 1e-6) -> np.ndarray:
        grad = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + eps
            upper = loss()
            array[index] = original - eps
            lower = loss()
            array[index] = original
            grad[index] = (upper - lower) / (2.0 * eps)
        return grad

    return gradient


@pytest.fixture
def relative_error() -> Callable:
    def error(analytic: np.ndarray, numeric: np.ndarray) -> float:
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-5)
        return float(np.max(np.abs(analytic - numeric)) / scale)

    return error


@pytest.fixture
def tiny_run_config(tmp_path) -> dict:
    """A run config that trains in well under a second."""
    return {
        "run_id": "tiny",
        "output_dir": str(tmp_path / "runs"),
        "seed": 3,
        "variant": "hard-learned",
        "layers": [
            {"kind": "dense", "width": 8},
            {"kind": "blockout", "width": 8, "clusters": 2},
            {"kind": "blockout", "clusters": 2},
        ],
        "superclasses": 2,
        "subclasses_per": 2,
        "dim": 6,
        "train_per_class": 12,
        "test_per_class": 6,
        "intra_spread": 0.5,
        "inter_spread": 4.0,
        "batch_size": 8,
        "iterations": 20,
        "snapshot_interval": 10,
        "eval_interval": 10,
        "log_interval": 10,
    }


@pytest.fixture
def write_config(tmp_path) -> Callable:
    """Write a config mapping as YAML and return its path."""

    def write(config: dict, name: str = "run.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(config, sort_keys=False))
        return path

    return write
