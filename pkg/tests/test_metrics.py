"""Tests for all-ranking evaluation, sparsity groups and significance."""

from __future__ import annotations

import math

import numpy as np
import pytest

from radar.core.validation import ValidationError
from radar.data.dataset import TEST, TRAIN, VALID, InteractionDataset, bucket_by_degree
from radar.evaluation.metrics import (
    UNRANKED,
    MetricReport,
    all_ranking_evaluate,
    degree_bucket_rows,
    ndcg_at_k,
    rank_users,
    recall_at_k,
    sparsity_group_report,
    summarize,
)
from radar.evaluation.significance import paired_significance
from radar.numerics.rng import make_rng


def _brute_force(user, item, ds: InteractionDataset, k: int) -> tuple[float, float]:
    train = ds.interaction_matrix(TRAIN).toarray() > 0
    test = ds.interaction_matrix(TEST).toarray() > 0
    recalls, ndcgs = [], []
    for u in range(ds.n_users):
        positives = set(np.flatnonzero(test[u]).tolist())
        if not positives:
            continue
        scored = [(-float(user[u] @ item[i]), i) for i in range(ds.n_items) if not train[u, i]]
        top = [i for _, i in sorted(scored)[:k]]
        hits = [1.0 if i in positives else 0.0 for i in top]
        recalls.append(sum(hits) / len(positives))
        dcg = sum(h / math.log2(r + 2) for r, h in enumerate(hits))
        idcg = sum(1.0 / math.log2(r + 2) for r in range(min(k, len(positives))))
        ndcgs.append(dcg / idcg)
    return float(np.mean(recalls)), float(np.mean(ndcgs))


@pytest.fixture
def ranked_dataset() -> InteractionDataset:
    # user 0: trains on item 0, tests on items 1 and 3
    # user 1: trains on item 2, tests on item 0
    # user 2: train only
    return InteractionDataset.from_arrays(
        3,
        4,
        [0, 0, 0, 1, 1, 2],
        [0, 1, 3, 2, 0, 1],
        split=[TRAIN, TEST, TEST, TRAIN, TEST, TRAIN],
    )


class TestRanking:
    def test_train_items_never_ranked(self, ranked_dataset: InteractionDataset) -> None:
        user = np.ones((3, 1))
        item = np.array([[5.0], [1.0], [3.0], [2.0]])
        result = rank_users(user, item, ranked_dataset, 4)
        assert result.users.tolist() == [0, 1]
        assert result.ranked[0].tolist() == [2, 3, 1, UNRANKED]
        assert result.ranked[1].tolist() == [0, 3, 1, UNRANKED]
        assert result.skipped == 1

    def test_ties_break_by_item_index(self, ranked_dataset: InteractionDataset) -> None:
        result = rank_users(np.zeros((3, 2)), np.zeros((4, 2)), ranked_dataset, 3)
        assert result.ranked[0].tolist() == [1, 2, 3]

    def test_mismatched_tables(self, ranked_dataset: InteractionDataset) -> None:
        with pytest.raises(ValidationError):
            rank_users(np.zeros((2, 2)), np.zeros((4, 2)), ranked_dataset, 3)


class TestMetrics:
    def test_hand_computed_values(self, ranked_dataset: InteractionDataset) -> None:
        user = np.ones((3, 1))
        item = np.array([[5.0], [1.0], [3.0], [2.0]])
        report = all_ranking_evaluate(user, item, ranked_dataset, ks=(1, 2))
        # user 0 ranks [2, 3, 1]: one of two positives at rank 2
        # user 1 ranks [0, 3, 1]: its positive at rank 1
        assert report.recall[1] == pytest.approx((0.0 + 1.0) / 2)
        assert report.recall[2] == pytest.approx((0.5 + 1.0) / 2)
        ndcg_user0 = (1.0 / math.log2(3.0)) / (1.0 + 1.0 / math.log2(3.0))
        assert report.ndcg[2] == pytest.approx((ndcg_user0 + 1.0) / 2)

    def test_second_rank_discount(self) -> None:
        ds = InteractionDataset.from_arrays(1, 2, [0, 0], [0, 1], split=[TEST, VALID])
        report = all_ranking_evaluate(
            np.ones((1, 1)), np.array([[1.0], [2.0]]), ds, ks=(2,)
        )
        assert report.ndcg[2] == pytest.approx(1.0 / math.log2(3.0))
        assert report.ndcg[2] == pytest.approx(0.6309, abs=1e-4)

    def test_matches_brute_force(self, small_synthetic: InteractionDataset) -> None:
        rng = make_rng(0, "metrics")
        user = rng.normal(size=(small_synthetic.n_users, 4))
        item = rng.normal(size=(small_synthetic.n_items, 4))
        for k in (1, 5, 10):
            report = all_ranking_evaluate(user, item, small_synthetic, ks=(k,))
            recall, ndcg = _brute_force(user, item, small_synthetic, k)
            assert report.recall[k] == pytest.approx(recall)
            assert report.ndcg[k] == pytest.approx(ndcg)

    def test_metrics_bounded_and_monotone_recall(
        self, small_synthetic: InteractionDataset
    ) -> None:
        rng = make_rng(1, "metrics")
        user = rng.normal(size=(small_synthetic.n_users, 3))
        item = rng.normal(size=(small_synthetic.n_items, 3))
        report = all_ranking_evaluate(user, item, small_synthetic, ks=(5, 10, 20))
        values = [report.recall[k] for k in (5, 10, 20)]
        assert values == sorted(values)
        assert all(0.0 <= report.ndcg[k] <= 1.0 for k in report.ks)

    def test_k_beyond_candidates(self, ranked_dataset: InteractionDataset) -> None:
        report = all_ranking_evaluate(np.ones((3, 1)), np.ones((4, 1)), ranked_dataset, ks=(50,))
        assert report.recall[50] == pytest.approx(1.0)

    def test_no_scorable_users(self, caplog: pytest.LogCaptureFixture) -> None:
        ds = InteractionDataset.from_arrays(1, 2, [0], [0])
        result = rank_users(np.ones((1, 1)), np.ones((2, 1)), ds, 2)
        assert len(result) == 0
        assert recall_at_k(result, 2) == 0.0
        assert ndcg_at_k(result, 2) == 0.0
        assert "No users with positives" in caplog.text

    def test_empty_cutoffs(self, ranked_dataset: InteractionDataset) -> None:
        with pytest.raises(ValidationError):
            all_ranking_evaluate(np.ones((3, 1)), np.ones((4, 1)), ranked_dataset, ks=())

    def test_report_round_trip(self) -> None:
        report = MetricReport(ks=(5,), recall={5: 0.25}, ndcg={5: 0.5}, n_users=3)
        data = report.to_dict()
        assert data == {"part": "test", "n_users": 3, "recall@5": 0.25, "ndcg@5": 0.5}
        assert MetricReport.from_dict(data) == report


class TestSparsityGroups:
    def test_user_buckets_partition_users(self, small_synthetic: InteractionDataset) -> None:
        rng = make_rng(2, "metrics")
        user = rng.normal(size=(small_synthetic.n_users, 3))
        item = rng.normal(size=(small_synthetic.n_items, 3))
        result = rank_users(user, item, small_synthetic, 10)
        buckets = bucket_by_degree(small_synthetic, "user")
        groups = sparsity_group_report(result, buckets, "user", ks=(10,))
        scored = {label: r for label, r in groups.items() if r is not None}
        assert sum(r.n_users for r in scored.values()) == len(result)
        assert all(r.part.startswith("user:") for r in scored.values())

    def test_item_bucket_restricts_positives(self, ranked_dataset: InteractionDataset) -> None:
        user = np.ones((3, 1))
        item = np.array([[5.0], [1.0], [3.0], [2.0]])
        result = rank_users(user, item, ranked_dataset, 3)
        groups = sparsity_group_report(result, {"only-3": [3], "none": []}, "item", ks=(1, 2))
        assert groups["none"] is None
        only = groups["only-3"]
        assert only is not None
        assert only.n_users == 1
        assert only.recall[1] == 0.0
        assert only.recall[2] == 1.0

    def test_degree_bucket_rows_cover_both_axes(self, small_synthetic: InteractionDataset) -> None:
        rng = make_rng(4, "metrics")
        user = rng.normal(size=(small_synthetic.n_users, 3))
        item = rng.normal(size=(small_synthetic.n_items, 3))
        result = rank_users(user, item, small_synthetic, 10)
        rows = degree_bucket_rows(result, small_synthetic, (10,), (2, 4, 6))
        users = [r for r in rows if r["axis"] == "user"]
        items = [r for r in rows if r["axis"] == "item"]
        assert [r["bucket"] for r in users] == ["0-2", "3-4", "5-6", "7+"]
        assert rows[: len(users)] == users
        assert sum(r["n_ids"] for r in users) == small_synthetic.n_users
        assert sum(r["n_ids"] for r in items) == small_synthetic.n_items
        empty = users[0]
        assert empty["n_users"] == 0
        assert empty["recall@10"] is None and empty["ndcg@10"] is None
        full = all_ranking_evaluate(user, item, small_synthetic, (10,))
        assert users[2]["n_users"] == full.n_users
        assert users[2]["recall@10"] == pytest.approx(full.recall[10])


class TestSummaries:
    def test_summarize(self) -> None:
        stats = summarize([1.0, 2.0, 3.0])
        assert stats["mean"] == pytest.approx(2.0)
        assert stats["std"] == pytest.approx(1.0)
        assert summarize([4.0]) == {"mean": 4.0, "std": 0.0}
        assert math.isnan(summarize([])["mean"])

    def test_paired_significance(self) -> None:
        a = [0.30, 0.32, 0.31, 0.35, 0.33]
        b = [0.20, 0.25, 0.22, 0.21, 0.24]
        assert paired_significance(a, b) < 0.01
        assert paired_significance(a, a) == 1.0
        assert paired_significance([1.0, 2.0], [0.5, 1.5]) == 0.0

    def test_paired_significance_rejects_misaligned(self) -> None:
        with pytest.raises(ValidationError):
            paired_significance([1.0, 2.0], [1.0])
        with pytest.raises(ValidationError):
            paired_significance([1.0], [2.0])


class TestRandomInstances:
    def test_hundred_instances_match_brute_force(self) -> None:
        for seed in range(100):
            rng = make_rng(seed, "instance")
            n_users = int(rng.integers(2, 21))
            n_items = int(rng.integers(5, 51))
            keys = rng.choice(n_users * n_items, size=min(3 * n_users, n_users * n_items // 2))
            keys = np.unique(keys)
            ds = InteractionDataset.from_arrays(
                n_users,
                n_items,
                keys // n_items,
                keys % n_items,
                split=rng.choice([TRAIN, TRAIN, VALID, TEST], size=keys.size),
            )
            if not (ds.split == TEST).any():
                continue
            user = rng.normal(size=(n_users, 3))
            item = rng.normal(size=(n_items, 3))
            k = int(rng.integers(1, n_items + 1))
            report = all_ranking_evaluate(user, item, ds, ks=(k,))
            recall, ndcg = _brute_force(user, item, ds, k)
            assert report.recall[k] == pytest.approx(recall, abs=1e-12)
            assert report.ndcg[k] == pytest.approx(ndcg, abs=1e-12)
