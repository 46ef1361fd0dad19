"""Embedding tables, residual graph propagation, scoring and BPR loss."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from radar.core.graph import MaskedAdjacency, NormalizedAdjacency
from radar.core.validation import ValidationError, validate_non_negative_int, validate_positive_int
from radar.data.dataset import TRAIN, InteractionDataset, SamplingError
from radar.numerics.rng import RandomStream
from radar.numerics.sparse import spmm
from radar.numerics.tensor import (
    ShapeError,
    Tensor,
    add,
    gather,
    log_sigmoid,
    mul,
    neg,
    parameter,
    reduce_mean,
    reduce_sum,
    row_dot,
    sub,
)

logger = logging.getLogger(__name__)

Adjacency = Union[NormalizedAdjacency, MaskedAdjacency]


@dataclass(frozen=True, slots=True)
class PropagationConfig:
    n_layers: int = 2
    dim: int = 32

    def __post_init__(self) -> None:
        validate_non_negative_int(self.n_layers, "n_layers")
        validate_positive_int(self.dim, "dim")


@dataclass(slots=True)
class EmbeddingState:
    """
    Initial tables plus per-layer and summed propagated embeddings.

    ``user_layers[0]`` is ``user0`` and ``user`` equals the sum of all
    entries of ``user_layers`` (likewise for items).
    """

    user0: Tensor
    item0: Tensor
    user_layers: list[Tensor] = field(default_factory=list)
    item_layers: list[Tensor] = field(default_factory=list)
    user: Tensor | None = None
    item: Tensor | None = None

    def __post_init__(self) -> None:
        if not self.user_layers:
            self.user_layers = [self.user0]
            self.item_layers = [self.item0]
        if self.user is None:
            self.user = self.user0
        if self.item is None:
            self.item = self.item0

    @property
    def final_user(self) -> Tensor:
        assert self.user is not None
        return self.user

    @property
    def final_item(self) -> Tensor:
        assert self.item is not None
        return self.item

    @property
    def dim(self) -> int:
        return self.user0.shape[1]


def init_embeddings(
    n_users: int, n_items: int, cfg: PropagationConfig, rng: RandomStream
) -> EmbeddingState:
    """Draw learnable tables from Normal(0, 0.1 / sqrt(d))."""
    scale = 0.1 / math.sqrt(cfg.dim)
    return EmbeddingState(
        user0=parameter(rng.normal(0.0, scale, size=(n_users, cfg.dim))),
        item0=parameter(rng.normal(0.0, scale, size=(n_items, cfg.dim))),
    )


def _operands(adj: Adjacency) -> tuple[NormalizedAdjacency, Tensor | None, Tensor | None]:
    if isinstance(adj, MaskedAdjacency):
        return adj.base, adj.values, adj.transpose_values()
    return adj, None, None


def propagate_layer(adj: Adjacency, user: Tensor, item: Tensor) -> tuple[Tensor, Tensor]:
    """One residual message-passing step: ``(A E_v + E_u, Aᵀ E_u + E_v)``."""
    base, values, values_t = _operands(adj)
    if user.shape[0] != base.n_users or item.shape[0] != base.n_items:
        raise ShapeError(
            f"adjacency is {base.n_users}x{base.n_items}, "
            f"embeddings have {user.shape[0]} users and {item.shape[0]} items"
        )
    next_user = add(spmm(base.matrix, item, values), user)
    next_item = add(spmm(base.transpose, user, values_t), item)
    return next_user, next_item


def propagate(
    adj: Adjacency | Sequence[MaskedAdjacency],
    state: EmbeddingState,
    cfg: PropagationConfig,
) -> EmbeddingState:
    """
    Propagate the initial tables of ``state`` through ``cfg.n_layers`` layers.

    ``adj`` is either one adjacency used by every layer or a sequence with
    one masked adjacency per layer. The final embeddings are the sum of the
    layer outputs, layer 0 included.

    Raises:
        ShapeError: If the adjacency does not match the table sizes
        ValidationError: If a per-layer sequence has the wrong length
    """
    if isinstance(adj, (NormalizedAdjacency, MaskedAdjacency)):
        per_layer: Sequence[Adjacency] = [adj] * cfg.n_layers
    else:
        per_layer = list(adj)
        if len(per_layer) != cfg.n_layers:
            raise ValidationError(
                f"expected {cfg.n_layers} per-layer adjacencies, got {len(per_layer)}"
            )

    user, item = state.user0, state.item0
    if user.shape[1] != item.shape[1]:
        raise ShapeError("user and item tables must have the same width")
    user_layers, item_layers = [user], [item]
    total_user, total_item = user, item
    for layer_adj in per_layer:
        user, item = propagate_layer(layer_adj, user, item)
        user_layers.append(user)
        item_layers.append(item)
        total_user = add(total_user, user)
        total_item = add(total_item, item)

    return EmbeddingState(
        user0=state.user0,
        item0=state.item0,
        user_layers=user_layers,
        item_layers=item_layers,
        user=total_user,
        item=total_item,
    )


def score(e_u: Tensor, e_i: Tensor) -> Tensor:
    """Inner-product preference; row-wise when given matrices."""
    if e_u.shape != e_i.shape:
        raise ShapeError(f"score needs equal shapes, got {e_u.shape} and {e_i.shape}")
    if e_u.ndim == 1:
        return reduce_sum(mul(e_u, e_i))
    return row_dot(e_u, e_i)


@dataclass(frozen=True, slots=True)
class BprTriples:
    users: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self) -> int:
        return int(self.users.shape[0])


def bpr_loss(triples: BprTriples, user_emb: Tensor, item_emb: Tensor) -> Tensor:
    """
    Mean of ``-log sigmoid(y_ui - y_uj)`` over the batch.

    Raises:
        ValidationError: If the batch is empty
    """
    if len(triples) == 0:
        raise ValidationError("bpr_loss needs a non-empty batch")
    users = gather(user_emb, triples.users)
    pos = score(users, gather(item_emb, triples.positives))
    negs = score(users, gather(item_emb, triples.negatives))
    return reduce_mean(neg(log_sigmoid(sub(pos, negs))))


@dataclass(frozen=True, slots=True)
class TrainIndex:
    """Sorted train edge keys for fast membership tests during sampling."""

    users: np.ndarray
    items: np.ndarray
    keys: np.ndarray
    n_items: int
    user_degrees: np.ndarray

    @classmethod
    def from_dataset(cls, ds: InteractionDataset) -> TrainIndex:
        sel = ds.mask(TRAIN)
        users, items = ds.users[sel], ds.items[sel]
        return cls(
            users=users,
            items=items,
            keys=np.sort(users * ds.n_items + items),
            n_items=ds.n_items,
            user_degrees=np.bincount(users, minlength=ds.n_users),
        )

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        probe = users * self.n_items + items
        if self.keys.size == 0:
            return np.zeros(probe.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self.keys, probe), self.keys.size - 1)
        return self.keys[pos] == probe


def sample_bpr_triples(
    data: InteractionDataset | TrainIndex,
    batch_size: int,
    rng: RandomStream,
    max_rounds: int = 100,
) -> BprTriples:
    """
    Draw uniform train edges and one uniform non-interacted item per edge.

    Raises:
        ValidationError: If the train split is empty
        SamplingError: If negatives cannot be found within ``max_rounds``
    """
    index = data if isinstance(data, TrainIndex) else TrainIndex.from_dataset(data)
    validate_non_negative_int(batch_size, "batch_size")
    empty = np.zeros(0, dtype=np.int64)
    if batch_size == 0:
        return BprTriples(empty, empty, empty)
    if index.users.size == 0:
        raise ValidationError("cannot sample from an empty train split")

    picks = rng.integers(0, index.users.size, size=batch_size)
    users = index.users[picks]
    positives = index.items[picks]
    negatives = rng.integers(0, index.n_items, size=batch_size)
    pending = np.flatnonzero(index.contains(users, negatives))
    for _ in range(max_rounds):
        if pending.size == 0:
            break
        negatives[pending] = rng.integers(0, index.n_items, size=pending.size)
        pending = pending[index.contains(users[pending], negatives[pending])]
    if pending.size:
        saturated = np.unique(users[pending])
        raise SamplingError(
            f"no negative item found for {saturated.size} user(s) after "
            f"{max_rounds} rounds (e.g. user {int(saturated[0])})"
        )
    return BprTriples(users.astype(np.int64), positives.astype(np.int64), negatives)
