from __future__ import annotations

import os
from pathlib import Path


ENV_HOME = "RADAR_HOME"
DEFAULT_HOME = "run"

CONFIG_FILE_NAME = "config"
MANIFEST_FILE_NAME = "manifest.json"
METRICS_FILE_NAME = "metrics.jsonl"
INTERACTIONS_FILE_NAME = "interactions.tsv"


def get_base_dir(out: Path | None = None) -> Path:
    """Run root: ``out`` when given, else ``$RADAR_HOME``, else ``./run``."""
    if out is not None:
        return out
    env = os.environ.get(ENV_HOME)
    if env:
        return Path(env).expanduser()
    return Path(DEFAULT_HOME)


def get_run_dir(name: str, out: Path | None = None) -> Path:
    if not name or "/" in name or name in (".", ".."):
        raise ValueError(f"invalid run name: {name!r}")
    return get_base_dir(out) / name
