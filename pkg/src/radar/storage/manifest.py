from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from radar import __version__

logger = logging.getLogger(__name__)


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(slots=True)
class RunManifest:
    """Summary of one training or evaluation run, written once at the end."""

    config: dict[str, Any]
    dataset_checksum: str
    seed: int
    code_version: str = __version__
    started_at: str = field(default_factory=utc_now)
    finished_at: str | None = None
    best_epoch: int | None = None
    checkpoint: str | None = None
    final_metrics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": dict(self.config),
            "dataset_checksum": self.dataset_checksum,
            "seed": self.seed,
            "code_version": self.code_version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "best_epoch": self.best_epoch,
            "checkpoint": self.checkpoint,
            "final_metrics": dict(self.final_metrics),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunManifest:
        return cls(
            config=dict(data["config"]),
            dataset_checksum=data["dataset_checksum"],
            seed=int(data["seed"]),
            code_version=data.get("code_version", __version__),
            started_at=data.get("started_at", ""),
            finished_at=data.get("finished_at"),
            best_epoch=data.get("best_epoch"),
            checkpoint=data.get("checkpoint"),
            final_metrics=dict(data.get("final_metrics") or {}),
        )


def write_json_atomic(path: Path, data: dict[str, Any]) -> None:
    """Write JSON to a temporary sibling and rename it over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_manifest(path: Path, manifest: RunManifest) -> None:
    write_json_atomic(path, manifest.to_dict())
    logger.info(f"Wrote manifest {path}")


def load_manifest(path: Path) -> RunManifest | None:
    if not path.exists():
        return None
    with path.open("r", encoding="utf-8") as fh:
        return RunManifest.from_dict(json.load(fh))
