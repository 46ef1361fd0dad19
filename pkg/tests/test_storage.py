"""Tests for config files, checkpoints, metrics logs, manifests and reports."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from radar.core.validation import ValidationError
from radar.data.dataset import InteractionDataset
from radar.storage.checkpoint import (
    Checkpoint,
    CheckpointError,
    checkpoint_path,
    latest_checkpoint,
    load_checkpoint,
    resolve_checkpoint,
    save_checkpoint,
)
from radar.storage.config import (
    env_overrides,
    format_config,
    load_config,
    parse_config_text,
    save_config,
)
from radar.storage.datasets import load_prepared, save_prepared
from radar.storage.manifest import RunManifest, load_manifest, save_manifest
from radar.storage.metrics_log import (
    MetricRecord,
    MetricsLogParseError,
    append_records,
    epoch_history,
    read_records,
)
from radar.storage.paths import get_base_dir, get_run_dir
from radar.storage.reports import metric_columns, write_csv, write_jsonl
from radar.training.config import TrainConfig


class TestConfigFiles:
    def test_parse_ignores_comments_and_blanks(self) -> None:
        text = "# backbone\ndim = 16\n\nlr=0.01  # tuned\n"
        assert parse_config_text(text) == {"dim": "16", "lr": "0.01"}

    def test_parse_rejects_bare_line(self) -> None:
        with pytest.raises(ValidationError, match="config:2"):
            parse_config_text("dim = 4\nepochs\n")

    def test_env_overrides_filter_known_fields(self) -> None:
        env = {"RADAR_DIM": "12", "RADAR_HOME": "/tmp/x", "OTHER_LR": "1", "RADAR_EPOCHS": "3"}
        assert env_overrides(env) == {"dim": "12", "epochs": "3"}

    def test_precedence(self, tmp_path: Path) -> None:
        path = tmp_path / "config"
        path.write_text("dim = 16\nepochs = 4\nlr = 0.5\n", encoding="utf-8")
        cfg = load_config(
            path,
            environ={"RADAR_EPOCHS": "7", "RADAR_LR": "0.25"},
            overrides={"lr": 0.1, "seed": None},
        )
        assert cfg.dim == 16
        assert cfg.epochs == 7
        assert cfg.lr == pytest.approx(0.1)
        assert cfg.seed == 0

    def test_unknown_key_is_validation_error(self, tmp_path: Path) -> None:
        path = tmp_path / "config"
        path.write_text("depth = 3\n", encoding="utf-8")
        with pytest.raises(ValidationError, match="unknown config key"):
            load_config(path, environ={})

    def test_bad_value(self) -> None:
        with pytest.raises(ValidationError, match="invalid value for dim"):
            load_config(None, environ={"RADAR_DIM": "wide"})

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent", environ={})

    def test_saved_config_reloads(self, tmp_path: Path) -> None:
        cfg = TrainConfig(dim=24, ks=(5, 15), hard_view=True, variant="gen+linear")
        save_config(tmp_path / "config", cfg)
        assert "ks = 5,15" in format_config(cfg)
        assert load_config(tmp_path / "config", environ={}) == cfg


class TestCheckpoints:
    def test_round_trip(self, tmp_path: Path) -> None:
        ckpt = Checkpoint(
            user=np.arange(6, dtype=np.float64).reshape(3, 2),
            item=np.full((4, 2), -0.5),
            n_layers=3,
        )
        path = checkpoint_path(tmp_path, 2)
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)
        assert path.name == "epoch_2.ckpt"
        np.testing.assert_array_equal(loaded.user, ckpt.user)
        np.testing.assert_array_equal(loaded.item, ckpt.item)
        assert loaded.n_layers == 3
        assert path.stat().st_size == 32 + 8 * 2 * 7

    def test_truncated_file(self, tmp_path: Path) -> None:
        path = tmp_path / "epoch_0.ckpt"
        save_checkpoint(path, Checkpoint(np.zeros((2, 2)), np.zeros((2, 2)), 1))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="expected"):
            load_checkpoint(path)

    def test_too_short(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"abc")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_incompatible_dataset(self) -> None:
        ckpt = Checkpoint(np.zeros((3, 2)), np.zeros((4, 2)), 1)
        ckpt.check_compatible(3, 4)
        with pytest.raises(CheckpointError, match="N=3"):
            ckpt.check_compatible(5, 4)
        with pytest.raises(CheckpointError):
            ckpt.check_compatible(3, 4, dim=8)

    def test_width_mismatch(self, tmp_path: Path) -> None:
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "x.ckpt", Checkpoint(np.zeros((1, 2)), np.zeros((1, 3)), 1))

    def test_latest_checkpoint(self, tmp_path: Path) -> None:
        assert latest_checkpoint(tmp_path) is None
        for epoch in (1, 10, 3):
            save_checkpoint(
                checkpoint_path(tmp_path, epoch), Checkpoint(np.zeros((1, 1)), np.zeros((1, 1)), 0)
            )
        assert latest_checkpoint(tmp_path) == tmp_path / "epoch_10.ckpt"

    def test_resolve_checkpoint(self, tmp_path: Path) -> None:
        blank = Checkpoint(np.zeros((1, 1)), np.zeros((1, 1)), 0)
        for epoch in (2, 5):
            save_checkpoint(checkpoint_path(tmp_path, epoch), blank)
        assert resolve_checkpoint(tmp_path / "epoch_2.ckpt") == tmp_path / "epoch_2.ckpt"
        assert resolve_checkpoint(tmp_path, "epoch_2.ckpt") == tmp_path / "epoch_2.ckpt"
        assert resolve_checkpoint(tmp_path, "epoch_9.ckpt") == tmp_path / "epoch_5.ckpt"
        assert resolve_checkpoint(tmp_path) == tmp_path / "epoch_5.ckpt"

    def test_resolve_checkpoint_missing(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError, match="checkpoint not found"):
            resolve_checkpoint(tmp_path / "epoch_0.ckpt")
        with pytest.raises(FileNotFoundError, match="no epoch_"):
            resolve_checkpoint(tmp_path)


class TestMetricsLog:
    def test_append_and_read(self, tmp_path: Path) -> None:
        path = tmp_path / "metrics.jsonl"
        append_records(path, [MetricRecord(0, "joint", {"loss": 0.5, "steps": 2})])
        append_records(path, [MetricRecord(0, "valid", {"recall@20": 0.1})])
        records = list(read_records(path))
        assert [r.kind for r in records] == ["joint", "valid"]
        assert records[0].values == {"loss": 0.5, "steps": 2}

    def test_lines_are_deterministic(self, tmp_path: Path) -> None:
        path = tmp_path / "metrics.jsonl"
        append_records(path, [MetricRecord(1, "joint", {"steps": 2, "loss": 0.5})])
        assert path.read_text() == '{"epoch":1,"kind":"joint","values":{"loss":0.5,"steps":2}}\n'

    def test_lenient_skips_bad_lines(
        self, tmp_path: Path, caplog: pytest.LogCaptureFixture
    ) -> None:
        path = tmp_path / "metrics.jsonl"
        path.write_text(
            '{"epoch": 0, "kind": "joint", "values": {}}\nnot json\n{"kind": "valid"}\n',
            encoding="utf-8",
        )
        assert len(list(read_records(path))) == 1
        assert "line 2" in caplog.text
        assert "line 3" in caplog.text

    def test_strict_raises(self, tmp_path: Path) -> None:
        path = tmp_path / "metrics.jsonl"
        path.write_text("{broken\n", encoding="utf-8")
        with pytest.raises(MetricsLogParseError, match="line 1"):
            list(read_records(path, strict=True))

    def test_missing_file_is_empty(self, tmp_path: Path) -> None:
        assert list(read_records(tmp_path / "absent.jsonl")) == []

    def test_epoch_history_merges_phases_and_validation(self) -> None:
        records = [
            MetricRecord(1, "joint", {"loss": 0.4, "steps": 2}),
            MetricRecord(0, "joint", {"loss": 0.9, "steps": 2}),
            MetricRecord(0, "bottleneck", {"loss": 1.5, "steps": 2}),
            MetricRecord(0, "valid", {"part": "valid", "n_users": 4, "recall@5": 0.25}),
        ]
        assert epoch_history(records) == [
            {"epoch": 0, "joint_loss": 0.9, "bottleneck_loss": 1.5, "recall@5": 0.25},
            {"epoch": 1, "joint_loss": 0.4},
        ]


class TestRunManifest:
    def test_round_trip(self, tmp_path: Path) -> None:
        manifest = RunManifest(config={"dim": 8}, dataset_checksum="abc", seed=4)
        manifest.best_epoch = 2
        manifest.final_metrics = {"test": {"recall@20": 0.3}}
        save_manifest(tmp_path / "manifest.json", manifest)
        loaded = load_manifest(tmp_path / "manifest.json")
        assert loaded == manifest

    def test_missing(self, tmp_path: Path) -> None:
        assert load_manifest(tmp_path / "manifest.json") is None


class TestPreparedDatasets:
    def test_round_trip_keeps_checksum(
        self, tmp_path: Path, small_synthetic: InteractionDataset
    ) -> None:
        manifest = save_prepared(tmp_path / "data", small_synthetic, {"seed": 3})
        loaded = load_prepared(tmp_path / "data")
        assert loaded.checksum() == small_synthetic.checksum() == manifest["checksum"]
        np.testing.assert_array_equal(loaded.split, small_synthetic.split)
        written = json.loads((tmp_path / "data" / "manifest.json").read_text(encoding="utf-8"))
        assert written["seed"] == 3

    def test_tampered_rows(self, tmp_path: Path, tiny_dataset: InteractionDataset) -> None:
        save_prepared(tmp_path, tiny_dataset)
        path = tmp_path / "interactions.tsv"
        lines = path.read_text(encoding="utf-8").splitlines()
        lines[1] = lines[1].replace("train", "test")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(ValidationError, match="checksum mismatch"):
            load_prepared(tmp_path)

    def test_malformed_row(self, tmp_path: Path, tiny_dataset: InteractionDataset) -> None:
        save_prepared(tmp_path, tiny_dataset)
        with (tmp_path / "interactions.tsv").open("a", encoding="utf-8") as fh:
            fh.write("only\ttwo\n")
        with pytest.raises(ValidationError, match="line 7"):
            load_prepared(tmp_path)

    def test_missing_directory(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_prepared(tmp_path / "nowhere")


class TestReportsAndPaths:
    def test_metric_columns(self) -> None:
        assert metric_columns((5, 10)) == ["recall@5", "ndcg@5", "recall@10", "ndcg@10"]
        assert metric_columns((5,), prefix="degradation_") == [
            "degradation_recall@5",
            "degradation_ndcg@5",
        ]

    def test_csv_blanks_missing_values(
        self, tmp_path: Path, read_report: Callable[[Path], list[dict[str, str]]]
    ) -> None:
        rows = [{"variant": "full", "seed": 0, "recall@5": 0.25, "extra": 1}, {"variant": "x"}]
        write_csv(tmp_path / "t.csv", rows, ["variant", "seed", "recall@5"])
        back = read_report(tmp_path / "t.csv")
        assert back[0] == {"variant": "full", "seed": "0", "recall@5": "0.25"}
        assert back[1] == {"variant": "x", "seed": "", "recall@5": ""}

    def test_jsonl_replaces_file(self, tmp_path: Path) -> None:
        path = tmp_path / "rows.jsonl"
        write_jsonl(path, [{"a": 1}, {"a": 2}])
        write_jsonl(path, [{"b": 3}])
        assert [json.loads(line) for line in path.read_text().splitlines()] == [{"b": 3}]

    def test_base_dir_resolution(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        assert get_base_dir(tmp_path / "out") == tmp_path / "out"
        monkeypatch.setenv("RADAR_HOME", str(tmp_path / "home"))
        assert get_run_dir("train") == tmp_path / "home" / "train"
        monkeypatch.delenv("RADAR_HOME")
        assert get_base_dir() == Path("run")

    def test_invalid_run_name(self) -> None:
        with pytest.raises(ValueError):
            get_run_dir("../escape")
