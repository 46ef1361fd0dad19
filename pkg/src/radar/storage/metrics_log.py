from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

logger = logging.getLogger(__name__)


class MetricsLogParseError(Exception):
    """Raised when metrics log parsing fails in strict mode."""


@dataclass(slots=True)
class MetricRecord:
    """
    One line of a run's metrics log.

    ``kind`` names the producer: a phase name ("joint", "bottleneck",
    "generators") with its mean loss, or "valid"/"test" with ranking metrics.
    Records carry no timestamps so seeded runs produce byte-identical logs.
    """

    epoch: int
    kind: str
    values: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"epoch": self.epoch, "kind": self.kind, "values": dict(self.values)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MetricRecord:
        values = data.get("values", {})
        if not isinstance(values, dict):
            raise TypeError("values must be an object")
        return cls(epoch=int(data["epoch"]), kind=str(data["kind"]), values=values)

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True) + "\n"


def _decode(text: str, line_num: int) -> MetricRecord:
    try:
        data = json.loads(text)
        if not isinstance(data, dict):
            raise TypeError("record must be an object")
        return MetricRecord.from_dict(data)
    except json.JSONDecodeError as e:
        raise MetricsLogParseError(f"line {line_num}: malformed JSON ({e.msg})") from e
    except (KeyError, ValueError, TypeError) as e:
        raise MetricsLogParseError(f"line {line_num}: invalid record ({e})") from e


def read_records(path: Path, strict: bool = False) -> Iterator[MetricRecord]:
    """
    Yield the records of ``metrics.jsonl`` in file order.

    A missing file yields nothing. Bad lines are logged and skipped, unless
    ``strict`` is set, in which case the first one raises
    MetricsLogParseError naming its line.
    """
    if not path.exists():
        return
    with path.open("r", encoding="utf-8") as fh:
        for line_num, raw in enumerate(fh, 1):
            text = raw.strip()
            if not text:
                continue
            try:
                yield _decode(text, line_num)
            except MetricsLogParseError as e:
                if strict:
                    raise
                logger.warning(f"{path}: {e}; skipped")


def append_records(path: Path, records: Iterable[MetricRecord]) -> None:
    """Append records to a JSONL metrics log, flushing after every line."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_line())
            fh.flush()


def epoch_history(records: Iterable[MetricRecord]) -> list[dict[str, Any]]:
    """
    One row per epoch, ordered by epoch.

    Phase records contribute ``<phase>_loss``; validation records contribute
    their metric columns (``recall@K``, ``ndcg@K``) as they were logged.
    """
    rows: dict[int, dict[str, Any]] = {}
    for record in records:
        row = rows.setdefault(record.epoch, {"epoch": record.epoch})
        if record.kind == "valid":
            row.update({k: v for k, v in record.values.items() if "@" in k})
        elif "loss" in record.values:
            row[f"{record.kind}_loss"] = record.values["loss"]
    return [rows[epoch] for epoch in sorted(rows)]
