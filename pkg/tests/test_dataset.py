"""Tests for interaction loading, splitting, noise injection and degree buckets."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from radar.core.validation import ValidationError
from radar.data.dataset import (
    TEST,
    TRAIN,
    VALID,
    DatasetParseError,
    InteractionDataset,
    NoiseSpec,
    SamplingError,
    bucket_by_degree,
    bucket_labels,
    default_aggregation,
    inject_noise,
    load_interactions,
    split_dataset,
)
from radar.data.synthetic import generate_synthetic, within_cluster_fraction


class TestLoadInteractions:
    def test_binary_regime_deduplicates(self, tmp_path: Path, write_interactions) -> None:
        path = write_interactions(
            tmp_path / "x.tsv",
            [("alice", "song1"), ("alice", "song1"), ("bob", "song2"), ("alice", "song2")],
        )
        ds = load_interactions(path)
        assert ds.n_users == 2
        assert ds.n_items == 2
        assert ds.n_edges == 3
        assert ds.weights.tolist() == [1.0, 1.0, 1.0]
        assert (ds.split == TRAIN).all()

    def test_weighted_count_aggregation(self, tmp_path: Path, write_interactions) -> None:
        path = write_interactions(
            tmp_path / "x.tsv",
            [("u", "a", "5"), ("u", "a", "2"), ("u", "b", "1")],
        )
        ds = load_interactions(path, regime="weighted", aggregation="count")
        assert ds.weights.tolist() == [2.0, 1.0]

    def test_weighted_sum_and_max(self, tmp_path: Path, write_interactions) -> None:
        path = write_interactions(tmp_path / "x.tsv", [("u", "a", "5"), ("u", "a", "2")])
        assert load_interactions(path, regime="weighted", aggregation="sum").weights.tolist() == [
            7.0
        ]
        assert load_interactions(path, regime="weighted", aggregation="max").weights.tolist() == [
            5.0
        ]

    def test_csv_format(self, tmp_path: Path, write_interactions) -> None:
        path = write_interactions(tmp_path / "x.csv", [("u1", "i1"), ("u2", "i1")], ",")
        ds = load_interactions(path, fmt="csv")
        assert ds.n_edges == 2
        assert ds.user_ids == ("u1", "u2")

    def test_lastfm_format_skips_header(self, tmp_path: Path, write_interactions) -> None:
        path = write_interactions(
            tmp_path / "user_artists.dat",
            [("userID", "artistID", "weight"), ("2", "51", "13883"), ("2", "52", "11690")],
        )
        ds = load_interactions(path, fmt="lastfm", regime="weighted", aggregation="sum")
        assert ds.n_edges == 2
        assert ds.weights.tolist() == [13883.0, 11690.0]

    def test_lastfm_weighted_defaults_keep_listen_counts(
        self, tmp_path: Path, write_interactions
    ) -> None:
        path = write_interactions(
            tmp_path / "user_artists.dat",
            [("userID", "artistID", "weight"), ("2", "51", "13883"), ("2", "52", "11690")],
        )
        ds = load_interactions(path, fmt="lastfm", regime="weighted")
        assert ds.weights.tolist() == [13883.0, 11690.0]

    def test_default_aggregation_per_format(self) -> None:
        assert default_aggregation("lastfm") == "sum"
        assert default_aggregation("tsv") == "count"
        assert default_aggregation("csv") == "count"

    def test_comments_and_blank_lines_are_skipped(self, tmp_path: Path) -> None:
        path = tmp_path / "x.tsv"
        path.write_text("# header\n\nu\ti\n", encoding="utf-8")
        assert load_interactions(path).n_edges == 1

    def test_malformed_row_reports_line(self, tmp_path: Path) -> None:
        path = tmp_path / "x.tsv"
        path.write_text("u\ti\nonly-one-field\n", encoding="utf-8")
        with pytest.raises(DatasetParseError) as exc_info:
            load_interactions(path)
        assert "line 2" in str(exc_info.value)

    def test_bad_weight_reports_line(self, tmp_path: Path) -> None:
        path = tmp_path / "x.tsv"
        path.write_text("u\ti\tlots\n", encoding="utf-8")
        with pytest.raises(DatasetParseError) as exc_info:
            load_interactions(path, regime="weighted")
        assert "line 1" in str(exc_info.value)

    def test_empty_file(self, tmp_path: Path) -> None:
        path = tmp_path / "x.tsv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ValidationError) as exc_info:
            load_interactions(path)
        assert "empty dataset" in str(exc_info.value)

    def test_unknown_regime(self, tmp_path: Path, write_interactions) -> None:
        path = write_interactions(tmp_path / "x.tsv", [("u", "i")])
        with pytest.raises(ValidationError):
            load_interactions(path, regime="ternary")  # type: ignore[arg-type]


class TestDatasetInvariants:
    def test_rejects_unknown_item_index(self) -> None:
        with pytest.raises(ValidationError):
            InteractionDataset.from_arrays(1, 1, [0], [3])

    def test_edges_sorted_by_user_then_item(self) -> None:
        ds = InteractionDataset.from_arrays(2, 3, [1, 0, 0], [0, 2, 1])
        assert ds.users.tolist() == [0, 0, 1]
        assert ds.items.tolist() == [1, 2, 0]

    def test_arrays_are_read_only(self, tiny_dataset: InteractionDataset) -> None:
        with pytest.raises(ValueError):
            tiny_dataset.users[0] = 2

    def test_checksum_is_stable(self, tiny_dataset: InteractionDataset) -> None:
        again = InteractionDataset.from_arrays(3, 4, [0, 0, 1, 1, 2], [0, 1, 1, 2, 3])
        assert tiny_dataset.checksum() == again.checksum()


class TestSplit:
    def test_same_seed_same_tags(self) -> None:
        ds = generate_synthetic(40, 40, 4, 8, seed=3)
        a = split_dataset(ds, seed=11)
        b = split_dataset(ds, seed=11)
        np.testing.assert_array_equal(a.split, b.split)

    def test_different_seed_changes_tags(self) -> None:
        ds = generate_synthetic(40, 40, 4, 8, seed=3)
        assert not np.array_equal(split_dataset(ds, seed=1).split, split_dataset(ds, seed=2).split)

    def test_every_user_keeps_a_train_edge(self, small_synthetic: InteractionDataset) -> None:
        train_deg = small_synthetic.degrees("user", TRAIN)
        assert (train_deg >= 1).all()

    def test_per_user_counts_follow_fractions(self, small_synthetic: InteractionDataset) -> None:
        # 8 edges per user: round(1.6) = 2 valid, round(0.8) = 1 test
        assert (small_synthetic.degrees("user", VALID) == 2).all()
        assert (small_synthetic.degrees("user", TEST) == 1).all()
        assert (small_synthetic.degrees("user", TRAIN) == 5).all()

    def test_users_below_three_edges_stay_in_train(self) -> None:
        ds = InteractionDataset.from_arrays(2, 5, [0, 0, 1, 1, 1, 1], [0, 1, 0, 1, 2, 3])
        split = split_dataset(ds, seed=0)
        assert (split.split[split.users == 0] == TRAIN).all()

    def test_rejects_bad_fractions(self, tiny_dataset: InteractionDataset) -> None:
        with pytest.raises(ValidationError):
            split_dataset(tiny_dataset, (0.5, 0.4, 0.4))


class TestNoiseInjection:
    def test_replaces_exact_count(self, small_synthetic: InteractionDataset) -> None:
        n_train = int(small_synthetic.mask(TRAIN).sum())
        noisy = inject_noise(small_synthetic, NoiseSpec(0.2, seed=5))
        assert int(noisy.mask(TRAIN).sum()) == n_train
        before = set(small_synthetic.edge_keys()[small_synthetic.mask(TRAIN)].tolist())
        after = set(noisy.edge_keys()[noisy.mask(TRAIN)].tolist())
        assert len(before - after) == int(np.floor(0.2 * n_train))
        assert len(after - before) == int(np.floor(0.2 * n_train))

    def test_valid_and_test_untouched(self, small_synthetic: InteractionDataset) -> None:
        noisy = inject_noise(small_synthetic, NoiseSpec(0.25, seed=1))
        for part in (VALID, TEST):
            a = set(small_synthetic.edge_keys()[small_synthetic.mask(part)].tolist())
            b = set(noisy.edge_keys()[noisy.mask(part)].tolist())
            assert a == b

    def test_no_duplicate_pairs(self, small_synthetic: InteractionDataset) -> None:
        noisy = inject_noise(small_synthetic, NoiseSpec(0.25, seed=2))
        keys = noisy.edge_keys()
        assert np.unique(keys).size == keys.size

    def test_zero_ratio_is_identity(self, small_synthetic: InteractionDataset) -> None:
        assert inject_noise(small_synthetic, NoiseSpec(0.0)) is small_synthetic

    def test_ratio_above_half_rejected(self) -> None:
        with pytest.raises(ValidationError):
            NoiseSpec(0.6)

    def test_ratio_too_small_for_graph(self, tiny_dataset: InteractionDataset) -> None:
        with pytest.raises(ValidationError):
            inject_noise(tiny_dataset, NoiseSpec(0.1))

    def test_dense_graph_cannot_host_replacements(self) -> None:
        full = InteractionDataset.from_arrays(2, 2, [0, 0, 1, 1], [0, 1, 0, 1])
        with pytest.raises(SamplingError):
            inject_noise(full, NoiseSpec(0.5))

    def test_deterministic_for_seed(self, small_synthetic: InteractionDataset) -> None:
        a = inject_noise(small_synthetic, NoiseSpec(0.1, seed=9))
        b = inject_noise(small_synthetic, NoiseSpec(0.1, seed=9))
        assert a.checksum() == b.checksum()


class TestBuckets:
    def test_labels(self) -> None:
        assert bucket_labels((10, 20, 40, 80)) == ["0-10", "11-20", "21-40", "41-80", "81+"]

    def test_partition_covers_every_user(self, small_synthetic: InteractionDataset) -> None:
        buckets = bucket_by_degree(small_synthetic, "user", (2, 4, 6))
        members = [u for group in buckets.values() for u in group]
        assert sorted(members) == list(range(small_synthetic.n_users))
        # every user has exactly 5 train edges
        assert buckets["5-6"] == frozenset(range(small_synthetic.n_users))
        assert buckets["0-2"] == frozenset()

    def test_item_axis(self, tiny_dataset: InteractionDataset) -> None:
        buckets = bucket_by_degree(tiny_dataset, "item", (1,))
        assert buckets == {"0-1": frozenset({0, 2, 3}), "2+": frozenset({1})}

    def test_non_increasing_boundaries_rejected(self, tiny_dataset: InteractionDataset) -> None:
        with pytest.raises(ValidationError):
            bucket_by_degree(tiny_dataset, "user", (5, 5))


class TestSynthetic:
    def test_planted_fraction(self) -> None:
        ds = generate_synthetic(40, 40, 4, 10, seed=0, in_cluster_fraction=0.9)
        assert within_cluster_fraction(ds) == pytest.approx(0.9)
        assert ds.n_edges == 400

    def test_single_cluster_is_uniform(self) -> None:
        ds = generate_synthetic(10, 10, 1, 3, seed=0)
        assert within_cluster_fraction(ds) == 1.0

    def test_deterministic(self) -> None:
        a = generate_synthetic(20, 20, 2, 4, seed=8)
        b = generate_synthetic(20, 20, 2, 4, seed=8)
        assert a.checksum() == b.checksum()

    def test_rejects_too_many_edges(self) -> None:
        with pytest.raises(ValidationError):
            generate_synthetic(10, 10, 5, 3)
