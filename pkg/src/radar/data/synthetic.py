"""Planted-cluster bipartite corpora for desk-scale runs and property tests."""

from __future__ import annotations

import logging

import numpy as np

from radar.core.validation import (
    ValidationError,
    validate_positive_int,
    validate_probability,
)
from radar.data.dataset import InteractionDataset
from radar.numerics.rng import make_rng

logger = logging.getLogger(__name__)


def cluster_labels(n: int, n_clusters: int) -> np.ndarray:
    """Contiguous equal blocks; the remainder is folded into the last cluster."""
    size = n // n_clusters
    return np.minimum(np.arange(n) // size, n_clusters - 1).astype(np.int64)


def generate_synthetic(
    n_users: int,
    n_items: int,
    n_clusters: int,
    edges_per_user: int,
    seed: int = 0,
    in_cluster_fraction: float = 0.9,
) -> InteractionDataset:
    """
    Sample a bipartite graph with planted user/item clusters.

    Each user draws ``round(in_cluster_fraction * edges_per_user)`` distinct
    items from its own cluster and the rest from items outside it. With a
    single cluster every item is in-cluster and the graph is uniform random.

    Args:
        n_users: Number of users
        n_items: Number of items
        n_clusters: Number of planted clusters (at most min(n_users, n_items))
        edges_per_user: Distinct items per user
        seed: Random seed
        in_cluster_fraction: Share of each user's edges inside its cluster

    Returns:
        Dataset with all edges tagged train and cluster labels attached

    Raises:
        ValidationError: If parameters are out of range, or a cluster has
            fewer items than ``edges_per_user``
    """
    validate_positive_int(n_users, "n_users")
    validate_positive_int(n_items, "n_items")
    validate_positive_int(n_clusters, "n_clusters")
    validate_positive_int(edges_per_user, "edges_per_user")
    validate_probability(in_cluster_fraction, "in_cluster_fraction")
    if n_clusters > min(n_users, n_items):
        raise ValidationError(
            f"n_clusters ({n_clusters}) exceeds users ({n_users}) or items ({n_items})"
        )
    items_per_cluster = n_items // n_clusters
    if edges_per_user > items_per_cluster:
        raise ValidationError(
            f"edges_per_user ({edges_per_user}) exceeds items per cluster "
            f"({items_per_cluster})"
        )

    user_clusters = cluster_labels(n_users, n_clusters)
    item_clusters = cluster_labels(n_items, n_clusters)
    members = [np.flatnonzero(item_clusters == c) for c in range(n_clusters)]
    outsiders = [np.flatnonzero(item_clusters != c) for c in range(n_clusters)]

    if n_clusters == 1:
        n_inside = edges_per_user
    else:
        n_inside = int(np.floor(in_cluster_fraction * edges_per_user + 0.5))

    rng = make_rng(seed, "synthetic")
    users: list[np.ndarray] = []
    items: list[np.ndarray] = []
    for u in range(n_users):
        c = int(user_clusters[u])
        n_outside = min(edges_per_user - n_inside, outsiders[c].size)
        picked = rng.choice(members[c], size=n_inside, replace=False)
        if n_outside:
            picked = np.concatenate(
                (picked, rng.choice(outsiders[c], size=n_outside, replace=False))
            )
        users.append(np.full(picked.size, u, dtype=np.int64))
        items.append(picked)

    ds = InteractionDataset.from_arrays(
        n_users,
        n_items,
        np.concatenate(users),
        np.concatenate(items),
        user_clusters=user_clusters,
        item_clusters=item_clusters,
    )
    logger.info(
        f"Generated synthetic corpus: {n_users} users, {n_items} items, "
        f"{n_clusters} clusters, {ds.n_edges} edges"
    )
    return ds


def within_cluster_fraction(ds: InteractionDataset) -> float:
    """Share of edges whose user and item belong to the same planted cluster."""
    if ds.user_clusters is None or ds.item_clusters is None:
        raise ValidationError("dataset carries no cluster labels")
    if ds.n_edges == 0:
        return 0.0
    same = ds.user_clusters[ds.users] == ds.item_clusters[ds.items]
    return float(same.mean())
