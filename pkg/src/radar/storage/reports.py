"""JSON-lines and CSV report writers.

Column layouts:

- evaluation:  checkpoint, part, n_users, recall@K, ndcg@K for each K
- sparsity:    axis, bucket, n_ids, n_users, recall@K, ndcg@K (blank for
               buckets without scorable users)
- ablation:    variant, seed, recall@K, ndcg@K (aggregate rows use seed
               "mean" or "std")
- robustness:  variant, ratio, seed, recall@K, ndcg@K,
               degradation_recall@K, degradation_ndcg@K
- lambda sweep: lambda_ratio, seed, recall@K, ndcg@K
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

logger = logging.getLogger(__name__)


def metric_columns(ks: Sequence[int], prefix: str = "") -> list[str]:
    columns: list[str] = []
    for k in ks:
        columns.extend([f"{prefix}recall@{k}", f"{prefix}ndcg@{k}"])
    return columns


def write_jsonl(path: Path, rows: Iterable[dict[str, Any]]) -> None:
    """Write one JSON object per line, replacing any previous file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":"), sort_keys=True) + "\n")


def write_csv(path: Path, rows: Iterable[dict[str, Any]], columns: Sequence[str]) -> None:
    """Write ``rows`` with a header; missing values are left blank, extra keys dropped."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n"
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _cell(row.get(c)) for c in columns})
    logger.info(f"Wrote {path}")


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value
