from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Mapping

from radar.core.validation import ValidationError
from radar.training.config import TrainConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "RADAR_"


def parse_config_text(text: str, source: str = "config") -> dict[str, str]:
    """
    Parse flat ``key = value`` lines; ``#`` starts a comment.

    Raises:
        ValidationError: If a non-blank line has no ``=`` or an empty key
    """
    values: dict[str, str] = {}
    for line_num, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{line_num}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValidationError(f"{source}:{line_num}: empty key")
        values[key] = value
    return values


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    """``RADAR_<FIELD>`` variables that name a TrainConfig field, keyed by field name."""
    env = os.environ if environ is None else environ
    known = set(TrainConfig.__dataclass_fields__)
    out: dict[str, str] = {}
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower()
        if key in known:
            out[key] = value
    return out


def load_config(
    path: Path | None,
    environ: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> TrainConfig:
    """
    Build a TrainConfig from defaults, an optional file, the environment
    and explicit overrides, in increasing priority.

    Raises:
        FileNotFoundError: If ``path`` is given but missing
        ValidationError: If a key is unknown or a value cannot be parsed
    """
    values: dict[str, Any] = {}
    if path is not None:
        values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    env = env_overrides(environ)
    if env:
        logger.info(f"Environment overrides: {', '.join(sorted(env))}")
    values.update(env)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_dict(values)
    except KeyError as e:
        raise ValidationError(str(e.args[0])) from e
    except ValueError as e:
        raise ValidationError(str(e)) from e


def format_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def save_config(path: Path, config: TrainConfig) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_config(config), encoding="utf-8")
