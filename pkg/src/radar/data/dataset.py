"""Interaction datasets: loading, behavior merging, splitting, noise and buckets."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence, get_args

import numpy as np
import scipy.sparse as sps

from radar.core.validation import (
    ValidationError,
    validate_fractions,
    validate_increasing,
    validate_probability,
)
from radar.numerics.rng import make_rng

logger = logging.getLogger(__name__)

Regime = Literal["binary", "weighted"]
Aggregation = Literal["count", "sum", "max"]
FileFormat = Literal["tsv", "csv", "lastfm"]
Axis = Literal["user", "item"]

VALID_REGIMES = get_args(Regime)
VALID_AGGREGATIONS = get_args(Aggregation)
VALID_FORMATS = get_args(FileFormat)

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "valid", "test")

DEFAULT_FRACTIONS = (0.7, 0.2, 0.1)
DEFAULT_BOUNDARIES = (10, 20, 40, 80)
MAX_NOISE_RATIO = 0.5


class DatasetParseError(ValidationError):
    """Raised when an interaction file row cannot be parsed."""

    pass


class SamplingError(RuntimeError):
    """Raised when rejection sampling runs out of retries."""

    pass


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    user_id: str
    item_id: str
    weight: float = 1.0
    behavior: str | None = None

    def __post_init__(self) -> None:
        if not self.user_id or not self.item_id:
            raise ValidationError("user_id and item_id must be non-empty")
        if not math.isfinite(self.weight) or self.weight < 0:
            raise ValidationError(f"weight must be non-negative, got {self.weight}")


def _readonly(values: np.ndarray, dtype: type) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, slots=True)
class InteractionDataset:
    """
    Deduplicated user-item interactions with contiguous integer ids.

    Edge arrays are parallel and sorted by (user, item). ``split`` tags every
    edge with TRAIN, VALID or TEST.
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    users: np.ndarray
    items: np.ndarray
    weights: np.ndarray
    split: np.ndarray
    regime: Regime = "binary"
    user_clusters: np.ndarray | None = None
    item_clusters: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "users", _readonly(self.users, np.int64))
        object.__setattr__(self, "items", _readonly(self.items, np.int64))
        object.__setattr__(self, "weights", _readonly(self.weights, np.float64))
        object.__setattr__(self, "split", _readonly(self.split, np.int8))
        for name in ("user_clusters", "item_clusters"):
            labels = getattr(self, name)
            if labels is not None:
                object.__setattr__(self, name, _readonly(labels, np.int64))

        n = self.users.shape[0]
        if not (self.items.shape[0] == self.weights.shape[0] == self.split.shape[0] == n):
            raise ValidationError("edge arrays must have equal length")
        if n and (self.users.min() < 0 or self.users.max() >= self.n_users):
            raise ValidationError("edge references an unknown user index")
        if n and (self.items.min() < 0 or self.items.max() >= self.n_items):
            raise ValidationError("edge references an unknown item index")
        if n and not np.isin(self.split, (TRAIN, VALID, TEST)).all():
            raise ValidationError("split tags must be train, valid or test")
        if self.regime not in VALID_REGIMES:
            raise ValidationError(f"regime must be one of {VALID_REGIMES}")

    @classmethod
    def from_arrays(
        cls,
        n_users: int,
        n_items: int,
        users: Sequence[int] | np.ndarray,
        items: Sequence[int] | np.ndarray,
        weights: Sequence[float] | np.ndarray | None = None,
        split: Sequence[int] | np.ndarray | None = None,
        regime: Regime = "binary",
        user_clusters: np.ndarray | None = None,
        item_clusters: np.ndarray | None = None,
    ) -> InteractionDataset:
        """Build a dataset over generated ids ``u<k>``/``i<k>``; edges are sorted."""
        u = np.asarray(users, dtype=np.int64)
        i = np.asarray(items, dtype=np.int64)
        w = np.ones(u.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        s = np.zeros(u.shape[0], dtype=np.int8) if split is None else np.asarray(split)
        order = np.lexsort((i, u))
        return cls(
            user_ids=tuple(f"u{k}" for k in range(n_users)),
            item_ids=tuple(f"i{k}" for k in range(n_items)),
            users=u[order],
            items=i[order],
            weights=w[order],
            split=s[order],
            regime=regime,
            user_clusters=user_clusters,
            item_clusters=item_clusters,
        )

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_edges(self) -> int:
        return int(self.users.shape[0])

    def mask(self, part: int) -> np.ndarray:
        return self.split == part

    def edge_keys(self) -> np.ndarray:
        """Unique integer key ``user * n_items + item`` per edge."""
        return self.users * self.n_items + self.items

    def degrees(self, axis: Axis = "user", part: int = TRAIN) -> np.ndarray:
        """Edge counts per user or item within one split."""
        sel = self.mask(part)
        if axis == "user":
            return np.bincount(self.users[sel], minlength=self.n_users)
        return np.bincount(self.items[sel], minlength=self.n_items)

    def interaction_matrix(self, part: int = TRAIN) -> sps.csr_matrix:
        """Binary user x item matrix of the edges in one split."""
        sel = self.mask(part)
        data = np.ones(int(sel.sum()), dtype=np.float64)
        return sps.csr_matrix(
            (data, (self.users[sel], self.items[sel])),
            shape=(self.n_users, self.n_items),
        )

    def split_sizes(self) -> dict[str, int]:
        counts = np.bincount(self.split, minlength=3)
        return {name: int(counts[k]) for k, name in enumerate(SPLIT_NAMES)}

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update("\x1f".join(self.user_ids).encode("utf-8"))
        digest.update(b"\x1e")
        digest.update("\x1f".join(self.item_ids).encode("utf-8"))
        for arr in (self.users, self.items, self.weights, self.split):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()

    def manifest(self) -> dict[str, Any]:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_interactions": self.n_edges,
            "splits": self.split_sizes(),
            "regime": self.regime,
            "checksum": self.checksum(),
        }


def merge_behaviors(
    records: Iterable[InteractionRecord],
    regime: Regime = "binary",
    aggregation: Aggregation = "count",
) -> InteractionDataset:
    """
    Collapse interaction records into one edge per (user, item) pair.

    Binary regime keeps an edge with weight 1 whenever any record exists.
    Weighted regime aggregates the records of a pair: ``count`` of records
    (default), ``sum`` or ``max`` of their weights. Raw ids are remapped to
    contiguous indices in sorted order.

    Raises:
        ValidationError: If regime or aggregation is unknown
    """
    if regime not in VALID_REGIMES:
        raise ValidationError(f"regime must be one of {VALID_REGIMES}, got {regime!r}")
    if aggregation not in VALID_AGGREGATIONS:
        raise ValidationError(
            f"aggregation must be one of {VALID_AGGREGATIONS}, got {aggregation!r}"
        )

    merged: dict[tuple[str, str], float] = {}
    for record in records:
        key = (record.user_id, record.item_id)
        previous = merged.get(key)
        if aggregation == "count":
            merged[key] = (previous or 0.0) + 1.0
        elif aggregation == "sum":
            merged[key] = (previous or 0.0) + record.weight
        else:
            merged[key] = record.weight if previous is None else max(previous, record.weight)

    user_ids = tuple(sorted({u for u, _ in merged}))
    item_ids = tuple(sorted({i for _, i in merged}))
    user_index = {uid: k for k, uid in enumerate(user_ids)}
    item_index = {iid: k for k, iid in enumerate(item_ids)}

    pairs = sorted(merged, key=lambda p: (user_index[p[0]], item_index[p[1]]))
    users = np.array([user_index[u] for u, _ in pairs], dtype=np.int64)
    items = np.array([item_index[i] for _, i in pairs], dtype=np.int64)
    if regime == "binary":
        weights = np.ones(len(pairs), dtype=np.float64)
    else:
        weights = np.array([merged[p] for p in pairs], dtype=np.float64)

    return InteractionDataset(
        user_ids=user_ids,
        item_ids=item_ids,
        users=users,
        items=items,
        weights=weights,
        split=np.zeros(len(pairs), dtype=np.int8),
        regime=regime,
    )


def _parse_row(fields: list[str], line_num: int) -> InteractionRecord:
    fields = [f.strip() for f in fields]
    if len(fields) < 2 or not fields[0] or not fields[1]:
        raise DatasetParseError(
            f"line {line_num}: expected user_id and item_id, got {fields!r}"
        )
    weight = 1.0
    if len(fields) >= 3 and fields[2]:
        try:
            weight = float(fields[2])
        except ValueError as e:
            raise DatasetParseError(
                f"line {line_num}: weight is not a number: {fields[2]!r}"
            ) from e
    behavior = fields[3] if len(fields) >= 4 and fields[3] else None
    try:
        return InteractionRecord(fields[0], fields[1], weight, behavior)
    except ValidationError as e:
        raise DatasetParseError(f"line {line_num}: {e}") from e


def read_records(path: Path, fmt: FileFormat = "tsv") -> list[InteractionRecord]:
    """
    Parse interaction rows from a delimited text file.

    ``tsv`` and ``csv`` rows are ``user_id, item_id[, weight][, behavior]``;
    lines starting with ``#`` are comments. ``lastfm`` reads the tab-separated
    ``user_artists.dat`` layout and skips its header row.

    Raises:
        DatasetParseError: On a malformed row (message carries the line number)
    """
    if fmt not in VALID_FORMATS:
        raise ValidationError(f"format must be one of {VALID_FORMATS}, got {fmt!r}")
    records: list[InteractionRecord] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        for line_num, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if fmt == "lastfm" and line_num == 1:
                continue
            if fmt == "csv":
                fields = next(csv.reader([stripped]))
            else:
                fields = line.rstrip("\r\n").split("\t")
            records.append(_parse_row(fields, line_num))
    return records


def default_aggregation(fmt: FileFormat) -> Aggregation:
    """Last.FM rows carry listen counts, which add up; other formats count records."""
    return "sum" if fmt == "lastfm" else "count"


def load_interactions(
    path: Path,
    fmt: FileFormat = "tsv",
    regime: Regime = "binary",
    aggregation: Aggregation | None = None,
) -> InteractionDataset:
    """
    Load and deduplicate an interaction file.

    Args:
        path: Input file
        fmt: One of "tsv", "csv", "lastfm"
        regime: "binary" or "weighted" edges
        aggregation: How weighted duplicates combine; None picks
            ``default_aggregation(fmt)``

    Returns:
        Dataset with every edge tagged train (call split_dataset next)

    Raises:
        DatasetParseError: On a malformed row
        ValidationError: If the file holds no interactions
    """
    records = read_records(path, fmt)
    if not records:
        raise ValidationError(f"empty dataset: no interactions in {path}")
    if aggregation is None:
        aggregation = default_aggregation(fmt)
    ds = merge_behaviors(records, regime=regime, aggregation=aggregation)
    logger.info(
        f"Loaded {path}: {ds.n_users} users, {ds.n_items} items, "
        f"{ds.n_edges} interactions ({len(records)} rows)"
    )
    return ds


def _split_counts(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    if n < 3:
        return n, 0, 0
    n_valid = int(math.floor(n * fractions[1] + 0.5))
    n_test = int(math.floor(n * fractions[2] + 0.5))
    while n - n_valid - n_test < 1:
        if n_valid >= n_test:
            n_valid -= 1
        else:
            n_test -= 1
    return n - n_valid - n_test, n_valid, n_test


def split_dataset(
    ds: InteractionDataset,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> InteractionDataset:
    """
    Per-user stratified random split into train/valid/test.

    Users with fewer than three interactions keep every edge in train; every
    other user keeps at least one train edge. The same seed always yields
    identical tags.

    Raises:
        ValidationError: If fractions are invalid or the dataset is empty
    """
    parts = validate_fractions(fractions)
    if len(parts) != 3:
        raise ValidationError(f"fractions must have three parts, got {len(parts)}")
    if ds.n_edges == 0:
        raise ValidationError("cannot split an empty dataset")

    rng = make_rng(seed, "split")
    keys = rng.random(ds.n_edges)
    order = np.lexsort((keys, ds.users))
    counts = np.bincount(ds.users, minlength=ds.n_users)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    rank = np.arange(ds.n_edges) - np.repeat(starts, counts)

    bounds = np.array(
        [_split_counts(int(c), (parts[0], parts[1], parts[2])) for c in counts],
        dtype=np.int64,
    ).reshape(-1, 3)
    n_train = np.repeat(bounds[:, 0], counts)
    n_valid = np.repeat(bounds[:, 1], counts)

    tags_sorted = np.full(ds.n_edges, TEST, dtype=np.int8)
    tags_sorted[rank < n_train + n_valid] = VALID
    tags_sorted[rank < n_train] = TRAIN
    split = np.empty(ds.n_edges, dtype=np.int8)
    split[order] = tags_sorted

    result = replace(ds, split=split)
    logger.info(f"Split {ds.n_edges} interactions: {result.split_sizes()}")
    return result


@dataclass(frozen=True, slots=True)
class NoiseSpec:
    ratio: float
    seed: int = 0

    def __post_init__(self) -> None:
        validate_probability(self.ratio, "ratio")
        if self.ratio > MAX_NOISE_RATIO:
            raise ValidationError(
                f"ratio must be at most {MAX_NOISE_RATIO}, got {self.ratio}"
            )


def inject_noise(
    ds: InteractionDataset, spec: NoiseSpec, max_rounds: int = 100
) -> InteractionDataset:
    """
    Replace a fraction of train edges with uniformly sampled spurious pairs.

    Exactly ``floor(ratio * |train|)`` train edges are removed and the same
    number of previously absent (user, item) pairs are added as train edges.
    Valid and test edges are untouched.

    Raises:
        ValidationError: If a positive ratio would replace no edge
        SamplingError: If replacements cannot be found within ``max_rounds``
    """
    if spec.ratio == 0:
        return ds
    train_idx = np.flatnonzero(ds.mask(TRAIN))
    n_replace = int(math.floor(spec.ratio * train_idx.size))
    if n_replace < 1:
        raise ValidationError(
            f"ratio {spec.ratio} replaces no edge out of {train_idx.size} train edges"
        )
    capacity = ds.n_users * ds.n_items - ds.n_edges
    if capacity < n_replace:
        raise SamplingError(
            f"graph too dense: {capacity} free pairs for {n_replace} replacements"
        )

    rng = make_rng(spec.seed, "noise")
    removed = rng.choice(train_idx, size=n_replace, replace=False)
    taken = set(ds.edge_keys().tolist())
    added: list[int] = []
    for _ in range(max_rounds):
        need = n_replace - len(added)
        draw = rng.integers(0, ds.n_users * ds.n_items, size=2 * need + 16)
        for key in draw.tolist():
            if key not in taken:
                taken.add(key)
                added.append(key)
                if len(added) == n_replace:
                    break
        if len(added) == n_replace:
            break
    else:
        raise SamplingError(
            f"found {len(added)} of {n_replace} spurious pairs after {max_rounds} rounds"
        )

    keep = np.ones(ds.n_edges, dtype=bool)
    keep[removed] = False
    new_keys = np.array(added, dtype=np.int64)
    users = np.concatenate((ds.users[keep], new_keys // ds.n_items))
    items = np.concatenate((ds.items[keep], new_keys % ds.n_items))
    weights = np.concatenate((ds.weights[keep], np.ones(n_replace)))
    split = np.concatenate((ds.split[keep], np.full(n_replace, TRAIN, dtype=np.int8)))
    order = np.lexsort((items, users))

    logger.info(f"Replaced {n_replace} of {train_idx.size} train edges (ratio {spec.ratio})")
    return replace(
        ds,
        users=users[order],
        items=items[order],
        weights=weights[order],
        split=split[order],
    )


def bucket_labels(boundaries: Sequence[float]) -> list[str]:
    """Human-readable labels such as "0-10", "11-20", "81+"."""
    labels: list[str] = []
    lower = 0
    for bound in boundaries:
        upper = int(math.floor(bound))
        labels.append(f"{lower}-{upper}")
        lower = upper + 1
    labels.append(f"{lower}+")
    return labels


def bucket_by_degree(
    ds: InteractionDataset,
    axis: Axis = "user",
    boundaries: Sequence[float] = DEFAULT_BOUNDARIES,
) -> dict[str, frozenset[int]]:
    """
    Partition user or item indices by train degree.

    Bucket k holds ids with ``boundaries[k-1] < degree <= boundaries[k]``;
    the last bucket is open-ended. Every bucket is present, possibly empty.

    Raises:
        ValidationError: If boundaries are not strictly increasing
    """
    bounds = validate_increasing(boundaries, "boundaries")
    if axis not in ("user", "item"):
        raise ValidationError(f"axis must be 'user' or 'item', got {axis!r}")
    degrees = ds.degrees(axis, TRAIN)
    slot = np.searchsorted(np.asarray(bounds, dtype=np.float64), degrees, side="left")
    return {
        label: frozenset(np.flatnonzero(slot == k).tolist())
        for k, label in enumerate(bucket_labels(bounds))
    }
