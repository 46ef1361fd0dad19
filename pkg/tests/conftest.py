"""Shared test fixtures for radar tests."""

from __future__ import annotations

import csv
import os
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from radar.data.dataset import InteractionDataset, split_dataset
from radar.data.synthetic import generate_synthetic
from radar.numerics.rng import make_rng
from radar.training.config import TrainConfig


@pytest.fixture(autouse=True)
def _isolated_environment(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    """Keep RADAR_* variables from the developer shell out of every test."""
    for name in list(os.environ):
        if name.startswith("RADAR_"):
            monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("RADAR_HOME", str(tmp_path / "radar-home"))


@pytest.fixture
def tiny_dataset() -> InteractionDataset:
    """
    Three users and four items, all edges in train.

    u0: i0, i1
    u1: i1, i2
    u2: i3
    """
    return InteractionDataset.from_arrays(3, 4, [0, 0, 1, 1, 2], [0, 1, 1, 2, 3])


@pytest.fixture
def small_synthetic() -> InteractionDataset:
    """40 users x 40 items, 4 planted clusters, split 70/20/10."""
    ds = generate_synthetic(40, 40, 4, 8, seed=3, in_cluster_fraction=0.9)
    return split_dataset(ds, seed=3)


@pytest.fixture
def fast_config() -> TrainConfig:
    """A config that trains a handful of steps in well under a second per epoch."""
    return TrainConfig(
        dim=8,
        n_layers=1,
        batch_size=64,
        epochs=1,
        max_steps_per_epoch=2,
        diffusion_steps=10,
        inference_steps=2,
        diffusion_hidden=16,
        time_dim=8,
        ks=(5, 10),
    )


@pytest.fixture
def acl_config(fast_config: TrainConfig) -> TrainConfig:
    return replace(fast_config, variant="acl-only")


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(1234, "tests")


@pytest.fixture
def write_interactions() -> Callable[[Path, list[tuple[str, ...]]], Path]:
    """Factory writing tab-separated interaction rows to a file."""

    def _write(path: Path, rows: list[tuple[str, ...]], delimiter: str = "\t") -> Path:
        path.write_text("".join(delimiter.join(row) + "\n" for row in rows), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def read_report() -> Callable[[Path], list[dict[str, str]]]:
    """Read a CSV report back as string-valued rows."""

    def _read(path: Path) -> list[dict[str, str]]:
        with path.open("r", encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))

    return _read
