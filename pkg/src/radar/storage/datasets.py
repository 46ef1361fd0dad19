from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from radar.core.validation import ValidationError
from radar.data.dataset import SPLIT_NAMES, DatasetParseError, InteractionDataset
from radar.storage.manifest import write_json_atomic
from radar.storage.paths import INTERACTIONS_FILE_NAME, MANIFEST_FILE_NAME

logger = logging.getLogger(__name__)

COLUMNS = ("user_id", "item_id", "weight", "split")


def save_prepared(
    directory: Path, ds: InteractionDataset, extra: dict[str, Any] | None = None
) -> dict[str, Any]:
    """
    Write ``interactions.tsv`` and ``manifest.json`` for a split dataset.

    The manifest carries the counts, split sizes, checksum and regime plus
    the id tables, so reloading reproduces the same index mapping.

    Returns:
        The manifest that was written
    """
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / INTERACTIONS_FILE_NAME
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(COLUMNS)
        for u, i, w, s in zip(ds.users, ds.items, ds.weights, ds.split):
            writer.writerow((ds.user_ids[u], ds.item_ids[i], repr(float(w)), SPLIT_NAMES[s]))
    tmp.replace(path)

    manifest = ds.manifest()
    manifest.update(extra or {})
    manifest["user_ids"] = list(ds.user_ids)
    manifest["item_ids"] = list(ds.item_ids)
    write_json_atomic(directory / MANIFEST_FILE_NAME, manifest)
    logger.info(f"Prepared dataset written to {directory}")
    return manifest


def load_prepared(directory: Path) -> InteractionDataset:
    """
    Read a dataset written by ``save_prepared``.

    Raises:
        FileNotFoundError: If either file is missing
        DatasetParseError: On a malformed row
        ValidationError: If the checksum does not match the manifest
    """
    manifest_path = directory / MANIFEST_FILE_NAME
    path = directory / INTERACTIONS_FILE_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no {MANIFEST_FILE_NAME} in {directory}")
    with manifest_path.open("r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    user_index = {uid: k for k, uid in enumerate(manifest["user_ids"])}
    item_index = {iid: k for k, iid in enumerate(manifest["item_ids"])}
    split_index = {name: k for k, name in enumerate(SPLIT_NAMES)}

    users: list[int] = []
    items: list[int] = []
    weights: list[float] = []
    split: list[int] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        for line_num, row in enumerate(reader, 1):
            if line_num == 1:
                continue
            if not row:
                continue
            try:
                user, item, weight, part = row
                users.append(user_index[user])
                items.append(item_index[item])
                weights.append(float(weight))
                split.append(split_index[part])
            except (KeyError, ValueError) as e:
                raise DatasetParseError(f"line {line_num}: invalid row {row!r}") from e

    ds = InteractionDataset(
        user_ids=tuple(manifest["user_ids"]),
        item_ids=tuple(manifest["item_ids"]),
        users=np.array(users, dtype=np.int64),
        items=np.array(items, dtype=np.int64),
        weights=np.array(weights, dtype=np.float64),
        split=np.array(split, dtype=np.int8),
        regime=manifest.get("regime", "binary"),
    )
    expected = manifest.get("checksum")
    if expected and ds.checksum() != expected:
        raise ValidationError(f"checksum mismatch for dataset in {directory}")
    return ds
