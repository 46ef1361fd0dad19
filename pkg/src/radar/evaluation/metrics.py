"""All-ranking top-K evaluation: Recall@K and NDCG@K."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal, Mapping, Sequence

import numpy as np

from radar.core.validation import ValidationError, validate_positive_int
from radar.data.dataset import (
    DEFAULT_BOUNDARIES,
    SPLIT_NAMES,
    TEST,
    TRAIN,
    InteractionDataset,
    bucket_by_degree,
)

logger = logging.getLogger(__name__)

Metric = Literal["recall", "ndcg"]
DEFAULT_KS = (20, 40)
UNRANKED = -1


@dataclass(frozen=True, slots=True)
class RankingResult:
    """
    Top-``depth`` ranking for every user that has at least one positive.

    ``ranked[r]`` lists item indices best-first for user ``users[r]``; train
    positives are never ranked, and when a user has fewer candidates than
    ``depth`` the tail is padded with ``UNRANKED``. Ties in score are broken
    by ascending item index.
    """

    users: np.ndarray
    ranked: np.ndarray
    positives: tuple[np.ndarray, ...]
    n_items: int
    skipped: int = 0

    @property
    def depth(self) -> int:
        return int(self.ranked.shape[1]) if self.ranked.ndim == 2 else 0

    def __len__(self) -> int:
        return int(self.users.shape[0])

    def subset(self, rows: np.ndarray) -> RankingResult:
        """Restrict to the given row positions."""
        return RankingResult(
            users=self.users[rows],
            ranked=self.ranked[rows],
            positives=tuple(self.positives[r] for r in rows),
            n_items=self.n_items,
        )

    def restrict_positives(self, items: Iterable[int]) -> RankingResult:
        """Keep only positives in ``items``; users left without positives are dropped."""
        keep = np.fromiter(items, dtype=np.int64)
        rows: list[int] = []
        restricted: list[np.ndarray] = []
        for r, pos in enumerate(self.positives):
            inside = pos[np.isin(pos, keep)]
            if inside.size:
                rows.append(r)
                restricted.append(inside)
        idx = np.asarray(rows, dtype=np.int64)
        return RankingResult(
            users=self.users[idx],
            ranked=self.ranked[idx] if idx.size else self.ranked[:0],
            positives=tuple(restricted),
            n_items=self.n_items,
        )


def rank_all(
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    exclude: Any,
    users: np.ndarray,
    depth: int,
    chunk_size: int = 1024,
) -> np.ndarray:
    """
    Rank every item for each of ``users`` by inner-product score.

    Args:
        user_emb: (N, d) user representations
        item_emb: (M, d) item representations
        exclude: (N, M) scipy sparse matrix of items never to rank
        users: User indices to rank for
        depth: Number of leading positions to keep
        chunk_size: Users scored per matrix product

    Returns:
        (len(users), depth) item indices best-first, padded with UNRANKED
    """
    n_items = item_emb.shape[0]
    depth = min(depth, n_items)
    out = np.full((users.shape[0], depth), UNRANKED, dtype=np.int64)
    excluded = exclude.tocsr()
    for start in range(0, users.shape[0], chunk_size):
        batch = users[start : start + chunk_size]
        scores = user_emb[batch] @ item_emb.T
        block = excluded[batch]
        rows, cols = block.nonzero()
        scores[rows, cols] = -np.inf
        # stable sort on negated scores keeps ascending item order within ties
        order = np.argsort(-scores, axis=1, kind="stable")[:, :depth]
        candidates = n_items - np.diff(block.indptr)
        cut = np.arange(depth)[None, :] >= candidates[:, None]
        order[cut] = UNRANKED
        out[start : start + batch.shape[0]] = order
    return out


def rank_users(
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    ds: InteractionDataset,
    depth: int,
    part: int = TEST,
    chunk_size: int = 1024,
) -> RankingResult:
    """
    All-ranking over non-train items for users with positives in ``part``.

    Raises:
        ValidationError: If the embedding tables do not match the dataset
    """
    validate_positive_int(depth, "depth")
    if user_emb.shape[0] != ds.n_users or item_emb.shape[0] != ds.n_items:
        raise ValidationError(
            f"embeddings cover {user_emb.shape[0]} users and {item_emb.shape[0]} items, "
            f"dataset has {ds.n_users} and {ds.n_items}"
        )
    target = ds.interaction_matrix(part).tocsr()
    counts = np.diff(target.indptr)
    users = np.flatnonzero(counts > 0)
    skipped = ds.n_users - users.shape[0]
    if skipped:
        logger.debug(f"{skipped} user(s) have no {SPLIT_NAMES[part]} positives; excluded")
    positives = tuple(
        np.sort(target.indices[target.indptr[u] : target.indptr[u + 1]]).astype(np.int64)
        for u in users
    )
    ranked = rank_all(
        np.asarray(user_emb, dtype=np.float64),
        np.asarray(item_emb, dtype=np.float64),
        ds.interaction_matrix(TRAIN),
        users,
        depth,
        chunk_size,
    )
    return RankingResult(users, ranked, positives, ds.n_items, skipped)


def _hits(result: RankingResult, k: int) -> np.ndarray:
    if k > result.depth and result.depth < result.n_items:
        raise ValidationError(f"k={k} exceeds ranking depth {result.depth}")
    top = result.ranked[:, :k]
    rows = np.repeat(np.arange(len(result)), [p.size for p in result.positives])
    pos_keys = rows * result.n_items + np.concatenate(
        result.positives or (np.zeros(0, dtype=np.int64),)
    )
    keys = np.arange(len(result))[:, None] * result.n_items + top
    return np.isin(keys, pos_keys) & (top != UNRANKED)


def per_user_recall(result: RankingResult, k: int) -> np.ndarray:
    validate_positive_int(k, "k")
    if len(result) == 0:
        return np.zeros(0)
    sizes = np.array([p.size for p in result.positives], dtype=np.float64)
    return _hits(result, k).sum(axis=1) / sizes


def per_user_ndcg(result: RankingResult, k: int) -> np.ndarray:
    validate_positive_int(k, "k")
    if len(result) == 0:
        return np.zeros(0)
    hits = _hits(result, k)
    discount = 1.0 / np.log2(np.arange(hits.shape[1]) + 2.0)
    dcg = (hits * discount).sum(axis=1)
    ideal_len = np.minimum(k, [p.size for p in result.positives])
    ideal_table = np.concatenate(([0.0], np.cumsum(1.0 / np.log2(np.arange(k) + 2.0))))
    return dcg / ideal_table[ideal_len]


def recall_at_k(result: RankingResult, k: int) -> float:
    """Fraction of each user's positives found in the top ``k``, averaged over users."""
    values = per_user_recall(result, k)
    if values.size == 0:
        logger.warning("No users with positives; recall reported as 0")
        return 0.0
    return float(values.mean())


def ndcg_at_k(result: RankingResult, k: int) -> float:
    """
    Binary-relevance NDCG with a ``log2(rank + 1)`` discount.

    The ideal DCG places ``min(k, |positives|)`` hits at the top.
    """
    values = per_user_ndcg(result, k)
    if values.size == 0:
        logger.warning("No users with positives; NDCG reported as 0")
        return 0.0
    return float(values.mean())


@dataclass(slots=True)
class MetricReport:
    ks: tuple[int, ...]
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    n_users: int = 0
    part: str = "test"

    def get(self, metric: Metric, k: int) -> float:
        return self.recall[k] if metric == "recall" else self.ndcg[k]

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"part": self.part, "n_users": self.n_users}
        for k in self.ks:
            data[f"recall@{k}"] = self.recall[k]
            data[f"ndcg@{k}"] = self.ndcg[k]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MetricReport:
        ks = tuple(sorted(int(key.split("@")[1]) for key in data if key.startswith("recall@")))
        return cls(
            ks=ks,
            recall={k: float(data[f"recall@{k}"]) for k in ks},
            ndcg={k: float(data[f"ndcg@{k}"]) for k in ks},
            n_users=int(data.get("n_users", 0)),
            part=str(data.get("part", "test")),
        )


def report_from_result(
    result: RankingResult, ks: Sequence[int], part: str = "test"
) -> MetricReport:
    ks = tuple(ks)
    return MetricReport(
        ks=ks,
        recall={k: recall_at_k(result, k) for k in ks},
        ndcg={k: ndcg_at_k(result, k) for k in ks},
        n_users=len(result),
        part=part,
    )


def all_ranking_evaluate(
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    ds: InteractionDataset,
    ks: Sequence[int] = DEFAULT_KS,
    part: int = TEST,
) -> MetricReport:
    """
    Rank all non-train items for every user and score the ``part`` positives.

    Args:
        user_emb: Final user representations
        item_emb: Final item representations
        ds: Split dataset
        ks: Cutoffs to report
        part: Split holding the positives (TEST or VALID)

    Returns:
        MetricReport with Recall@K and NDCG@K for every K
    """
    if not ks:
        raise ValidationError("ks must not be empty")
    for k in ks:
        validate_positive_int(k, "k")
    result = rank_users(user_emb, item_emb, ds, max(ks), part)
    return report_from_result(result, ks, SPLIT_NAMES[part])


def sparsity_group_report(
    result: RankingResult,
    buckets: Mapping[str, Iterable[int]],
    axis: Literal["user", "item"] = "user",
    ks: Sequence[int] = (20,),
) -> dict[str, MetricReport | None]:
    """
    Metrics per degree bucket.

    User buckets restrict the ranked users; item buckets restrict each
    user's positives to the bucket's items. A bucket without any scorable
    user is reported as None. Recall measures coverage of a user's
    positives while NDCG rewards their placement, so sparse buckets can
    move the two in different directions.
    """
    out: dict[str, MetricReport | None] = {}
    for label, members in buckets.items():
        if axis == "user":
            rows = np.flatnonzero(np.isin(result.users, np.fromiter(members, dtype=np.int64)))
            part = result.subset(rows)
        else:
            part = result.restrict_positives(members)
        out[label] = report_from_result(part, ks, f"{axis}:{label}") if len(part) else None
    return out


def degree_bucket_rows(
    result: RankingResult,
    ds: InteractionDataset,
    ks: Sequence[int],
    boundaries: Sequence[float] = DEFAULT_BOUNDARIES,
) -> list[dict[str, Any]]:
    """
    Report rows for every train-degree bucket on both axes, users first.

    Each row carries ``axis``, ``bucket`` and ``n_ids`` (bucket size). A
    bucket without scorable users gets ``n_users = 0`` and null metrics.
    """
    rows: list[dict[str, Any]] = []
    axes: tuple[Literal["user", "item"], ...] = ("user", "item")
    for axis in axes:
        buckets = bucket_by_degree(ds, axis, boundaries)
        reports = sparsity_group_report(result, buckets, axis, ks)
        for label, members in buckets.items():
            row: dict[str, Any] = {"axis": axis, "bucket": label, "n_ids": len(members)}
            report = reports[label]
            if report is None:
                row.update({"part": f"{axis}:{label}", "n_users": 0})
                row.update({f"{m}@{k}": None for k in ks for m in ("recall", "ndcg")})
            else:
                row.update(report.to_dict())
            rows.append(row)
    return rows


def summarize(values: Sequence[float]) -> dict[str, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {"mean": math.nan, "std": math.nan}
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std}
