"""Variational graph autoencoder view generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Iterable

import numpy as np

from radar.core.encoder import BprTriples, propagate_layer
from radar.core.graph import MaskedAdjacency, NormalizedAdjacency, apply_edge_mask
from radar.core.validation import ValidationError
from radar.numerics.rng import RandomStream, glorot_uniform
from radar.numerics.tensor import (
    Tensor,
    add,
    clip,
    constant,
    exp,
    gather,
    l2_penalty,
    log,
    log_sigmoid,
    matmul,
    mul,
    neg,
    parameter,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    square,
    sub,
)

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-6
LOG_STD_BOUND = 20.0


@dataclass(slots=True)
class VgaeParams:
    """Two-layer GCN encoder, mean/std heads and the edge scorer ``f``."""

    w_gcn1: Tensor
    w_gcn2: Tensor
    w_mean: Tensor
    b_mean: Tensor
    w_std: Tensor
    b_std: Tensor
    w_score: Tensor
    b_score: Tensor

    @classmethod
    def init(cls, dim: int, rng: RandomStream) -> VgaeParams:
        return cls(
            w_gcn1=parameter(glorot_uniform(rng, dim, dim)),
            w_gcn2=parameter(glorot_uniform(rng, dim, dim)),
            w_mean=parameter(glorot_uniform(rng, dim, dim)),
            b_mean=parameter(np.zeros(dim)),
            w_std=parameter(glorot_uniform(rng, dim, dim)),
            b_std=parameter(np.zeros(dim)),
            w_score=parameter(glorot_uniform(rng, dim, 1)),
            b_score=parameter(np.zeros(1)),
        )

    def tensors(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass(slots=True)
class LatentSample:
    """Per-node Gaussian parameters and reparameterized draws ``z = mean + std * eps``."""

    user_mean: Tensor
    user_std: Tensor
    item_mean: Tensor
    item_std: Tensor
    user_z: Tensor
    item_z: Tensor

    @property
    def n_nodes(self) -> int:
        return self.user_mean.shape[0] + self.item_mean.shape[0]


def _heads(h: Tensor, params: VgaeParams) -> tuple[Tensor, Tensor]:
    mean = add(matmul(h, params.w_mean), params.b_mean)
    log_std = clip(add(matmul(h, params.w_std), params.b_std), -LOG_STD_BOUND, LOG_STD_BOUND)
    std = clip(exp(log_std), STD_FLOOR, np.inf)
    return mean, std


def vgae_encode(
    adj: NormalizedAdjacency,
    user_emb: Tensor,
    item_emb: Tensor,
    params: VgaeParams,
    rng: RandomStream | None = None,
    eps: tuple[np.ndarray, np.ndarray] | None = None,
) -> LatentSample:
    """
    Encode every node and draw one reparameterized latent sample.

    Args:
        adj: Normalized adjacency of the train graph
        user_emb: Input user features (backbone embeddings)
        item_emb: Input item features
        params: Encoder parameters
        rng: Source of standard-normal noise
        eps: Fixed (user, item) noise arrays; overrides ``rng``

    Raises:
        ValidationError: If neither ``rng`` nor ``eps`` is given
    """
    h_user, h_item = propagate_layer(adj, user_emb, item_emb)
    h_user = relu(matmul(h_user, params.w_gcn1))
    h_item = relu(matmul(h_item, params.w_gcn1))
    h_user, h_item = propagate_layer(adj, h_user, h_item)
    h_user = matmul(h_user, params.w_gcn2)
    h_item = matmul(h_item, params.w_gcn2)

    user_mean, user_std = _heads(h_user, params)
    item_mean, item_std = _heads(h_item, params)

    if eps is None:
        if rng is None:
            raise ValidationError("vgae_encode needs an rng or explicit eps")
        eps = (
            rng.standard_normal(user_mean.shape),
            rng.standard_normal(item_mean.shape),
        )
    user_z = add(user_mean, mul(user_std, constant(eps[0])))
    item_z = add(item_mean, mul(item_std, constant(eps[1])))
    return LatentSample(user_mean, user_std, item_mean, item_std, user_z, item_z)


def _kl_sum(mean: Tensor, std: Tensor) -> Tensor:
    inner = sub(sub(add(1.0, mul(2.0, log(std))), square(mean)), square(std))
    return mul(-0.5, reduce_sum(inner))


def kl_loss(sample: LatentSample) -> Tensor:
    """KL(N(mean, std²) || N(0, I)) summed over dimensions, averaged over nodes."""
    total = add(
        _kl_sum(sample.user_mean, sample.user_std),
        _kl_sum(sample.item_mean, sample.item_std),
    )
    return mul(total, 1.0 / sample.n_nodes)


def decoder_logits(
    params: VgaeParams, user_z: Tensor, item_z: Tensor
) -> Tensor:
    """``f(z_u ⊙ z_i)`` for aligned rows of user and item latents."""
    return reshape(add(matmul(mul(user_z, item_z), params.w_score), params.b_score), (-1,))


def discriminative_loss(
    sample: LatentSample, triples: BprTriples, params: VgaeParams
) -> Tensor:
    """
    Binary cross-entropy on observed edges (target 1) and sampled negatives (target 0).

    Raises:
        ValidationError: If the batch is empty
    """
    if len(triples) == 0:
        raise ValidationError("discriminative_loss needs a non-empty batch")
    users = gather(sample.user_z, triples.users)
    pos = decoder_logits(params, users, gather(sample.item_z, triples.positives))
    negs = decoder_logits(params, users, gather(sample.item_z, triples.negatives))
    pos_term = reduce_mean(neg(log_sigmoid(pos)))
    neg_term = reduce_mean(neg(log_sigmoid(neg(negs))))
    return add(pos_term, neg_term)


def vgae_total_loss(
    kl: Tensor | float,
    dis: Tensor | float,
    bpr: Tensor | float,
    params: Iterable[Tensor],
    reg: float,
) -> Tensor:
    """``kl + dis + bpr + reg * ||params||²``."""
    return add(add(add(kl, dis), bpr), mul(reg, l2_penalty(params)))


def generate_view(
    adj: NormalizedAdjacency,
    sample: LatentSample,
    params: VgaeParams,
    rng: RandomStream | None = None,
    hard: bool = False,
) -> MaskedAdjacency:
    """
    Reweight every train edge by its reconstruction probability.

    The soft view keeps each edge with weight ``p = sigmoid(f(z_u ⊙ z_i))``;
    ``hard=True`` keeps each edge with probability ``p`` instead.

    Raises:
        ValidationError: If ``hard`` is set without an rng
    """
    users = gather(sample.user_z, adj.edge_users())
    items = gather(sample.item_z, adj.edge_items())
    prob = sigmoid(decoder_logits(params, users, items))
    if not hard:
        return apply_edge_mask(adj, prob, retention=prob)
    if rng is None:
        raise ValidationError("hard views need an rng")
    kept = (rng.random(adj.n_edges) < prob.data).astype(np.float64)
    logger.debug(f"Hard view keeps {int(kept.sum())} of {adj.n_edges} edges")
    return apply_edge_mask(adj, kept, retention=prob.detach())
