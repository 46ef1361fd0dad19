"""Normalized user-item adjacency and per-layer edge masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from radar.core.validation import ValidationError
from radar.data.dataset import TRAIN, InteractionDataset
from radar.numerics.sparse import SparseMatrix
from radar.numerics.tensor import Tensor, as_tensor, constant, gather, mul


def _inverse_or_zero(values: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values, dtype=np.float64)
    np.divide(1.0, values, out=out, where=values > 0)
    return out


@dataclass(frozen=True, slots=True)
class NormalizedAdjacency:
    """
    Symmetrically normalized bipartite adjacency over the train edges.

    ``matrix`` is users x items with entries ``w / sqrt(d_u * d_v)``;
    ``transpose.values == matrix.values[perm]``. Stored entries are in
    (user, item) order, which is also the order of per-edge masks.
    """

    matrix: SparseMatrix
    transpose: SparseMatrix
    perm: np.ndarray
    user_degrees: np.ndarray
    item_degrees: np.ndarray
    user_mean: SparseMatrix
    item_mean: SparseMatrix
    raw_weights: np.ndarray | None = None

    @property
    def n_users(self) -> int:
        return self.matrix.n_rows

    @property
    def n_items(self) -> int:
        return self.matrix.n_cols

    @property
    def n_edges(self) -> int:
        return self.matrix.nnz

    def edge_users(self) -> np.ndarray:
        return self.matrix.row_of_entry()

    def edge_items(self) -> np.ndarray:
        return self.matrix.indices

    def values(self) -> Tensor:
        return constant(self.matrix.values)


def build_normalized_adjacency(
    ds: InteractionDataset, use_weights: bool = False
) -> NormalizedAdjacency:
    """
    Build ``D_u^{-1/2} A D_v^{-1/2}`` from the train edges of ``ds``.

    Binary mode uses unit weights; weighted mode uses edge weights both in
    ``A`` and in the degrees. Zero-degree users or items get all-zero rows or
    columns.

    Raises:
        ValidationError: If the train split is empty
    """
    sel = ds.mask(TRAIN)
    if not sel.any():
        raise ValidationError("train split is empty")
    users = ds.users[sel]
    items = ds.items[sel]
    weights = ds.weights[sel] if use_weights else np.ones(users.shape[0])

    user_deg = np.bincount(users, weights=weights, minlength=ds.n_users)
    item_deg = np.bincount(items, weights=weights, minlength=ds.n_items)
    scale = np.sqrt(user_deg[users] * item_deg[items])
    values = np.zeros_like(weights)
    np.divide(weights, scale, out=values, where=scale > 0)

    matrix = SparseMatrix.from_coo(ds.n_users, ds.n_items, users, items, values)
    transpose, perm = matrix.transpose()

    # Neighbor-mean operators count neighbors, not weights.
    user_count = np.diff(matrix.indptr).astype(np.float64)
    item_count = np.diff(transpose.indptr).astype(np.float64)
    user_mean = matrix.with_values(
        _inverse_or_zero(user_count)[matrix.row_of_entry()]
    )
    item_mean = transpose.with_values(
        _inverse_or_zero(item_count)[transpose.row_of_entry()]
    )
    return NormalizedAdjacency(
        matrix=matrix,
        transpose=transpose,
        perm=perm,
        user_degrees=user_deg,
        item_degrees=item_deg,
        user_mean=user_mean,
        item_mean=item_mean,
        raw_weights=ds.weights[sel].copy() if use_weights else None,
    )


@dataclass(frozen=True, slots=True)
class MaskedAdjacency:
    """``A ⊙ M`` for one layer (``layer=None`` applies to every layer)."""

    base: NormalizedAdjacency
    mask: Tensor
    values: Tensor
    layer: int | None = None
    retention: Tensor | None = None

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.mask.data))

    def transpose_values(self) -> Tensor:
        return gather(self.values, self.base.perm)

    def to_sparse(self) -> SparseMatrix:
        return self.base.matrix.with_values(self.values.data)


def apply_edge_mask(
    adj: NormalizedAdjacency,
    mask: Tensor | np.ndarray,
    layer: int | None = None,
    retention: Tensor | None = None,
) -> MaskedAdjacency:
    """
    Multiply every stored entry of ``adj`` by its mask value.

    Raises:
        ValidationError: If the mask length differs from the edge count or a
            value lies outside [0, 1]
    """
    m = as_tensor(mask)
    if m.shape != (adj.n_edges,):
        raise ValidationError(
            f"mask must have one value per edge ({adj.n_edges}), got shape {m.shape}"
        )
    if m.size and (m.data.min() < 0.0 or m.data.max() > 1.0):
        raise ValidationError("mask values must lie in [0, 1]")
    return MaskedAdjacency(
        base=adj,
        mask=m,
        values=mul(adj.values(), m),
        layer=layer,
        retention=retention,
    )
