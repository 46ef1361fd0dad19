"""Relation-aware edge denoiser: gated composition, edge scoring, concrete masks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Iterable, Literal, Sequence, get_args

import numpy as np

from radar.core.encoder import propagate_layer
from radar.core.graph import MaskedAdjacency, NormalizedAdjacency, apply_edge_mask
from radar.core.validation import ValidationError, validate_positive
from radar.numerics.rng import RandomStream, glorot_uniform
from radar.numerics.sparse import spmm
from radar.numerics.tensor import (
    Tensor,
    add,
    as_tensor,
    clip,
    concat,
    constant,
    div,
    exp,
    gather,
    l2_penalty,
    matmul,
    mul,
    parameter,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softplus,
    sub,
    tanh,
)

logger = logging.getLogger(__name__)

Scorer = Literal["relation", "linear"]
Mode = Literal["train", "eval"]
VALID_SCORERS = get_args(Scorer)

NOISE_CLAMP = 1e-6


@dataclass(slots=True)
class DenoiseLayerParams:
    """
    Parameters of one denoising layer.

    The relation-aware scorer uses every field; the linear scorer only uses
    ``w_att1`` (shape ``2d x 1``), ``b_att1`` and ``log_theta``.
    """

    w_gate: Tensor
    b_gate: Tensor
    w_embed: Tensor
    w_att1: Tensor
    b_att1: Tensor
    w_att2: Tensor | None
    b_att2: Tensor | None
    log_theta: Tensor

    @classmethod
    def init(
        cls,
        dim: int,
        rng: RandomStream,
        hidden: int | None = None,
        scorer: Scorer = "relation",
        theta: float = 1.0,
    ) -> DenoiseLayerParams:
        validate_positive(theta, "theta")
        log_theta = parameter(np.array([np.log(theta)]))
        if scorer == "linear":
            return cls(
                w_gate=parameter(np.zeros((2 * dim, dim))),
                b_gate=parameter(np.zeros(dim)),
                w_embed=parameter(np.zeros((2 * dim, dim))),
                w_att1=parameter(glorot_uniform(rng, 2 * dim, 1)),
                b_att1=parameter(np.zeros(1)),
                w_att2=None,
                b_att2=None,
                log_theta=log_theta,
            )
        width = hidden or dim
        return cls(
            w_gate=parameter(glorot_uniform(rng, 2 * dim, dim)),
            b_gate=parameter(np.zeros(dim)),
            w_embed=parameter(glorot_uniform(rng, 2 * dim, dim)),
            w_att1=parameter(glorot_uniform(rng, 4 * dim, width)),
            b_att1=parameter(np.zeros(width)),
            w_att2=parameter(glorot_uniform(rng, width, 1)),
            b_att2=parameter(np.zeros(1)),
            log_theta=log_theta,
        )

    @property
    def theta(self) -> Tensor:
        return exp(self.log_theta)

    def tensors(self) -> list[Tensor]:
        out = [getattr(self, f.name) for f in fields(self)]
        return [t for t in out if t is not None]


@dataclass(slots=True)
class DenoiseParams:
    layers: list[DenoiseLayerParams]
    scorer: Scorer = "relation"

    @classmethod
    def init(
        cls,
        dim: int,
        n_layers: int,
        rng: RandomStream,
        scorer: Scorer = "relation",
        theta: float = 1.0,
    ) -> DenoiseParams:
        if scorer not in VALID_SCORERS:
            raise ValidationError(f"scorer must be one of {VALID_SCORERS}, got {scorer!r}")
        layers = [
            DenoiseLayerParams.init(dim, rng, scorer=scorer, theta=theta)
            for _ in range(n_layers)
        ]
        return cls(layers=layers, scorer=scorer)

    def tensors(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer.tensors()]

    def weight_tensors(self) -> list[Tensor]:
        """Tensors subject to weight decay (temperatures excluded)."""
        return [
            t
            for layer in self.layers
            for t in layer.tensors()
            if t is not layer.log_theta
        ]


@dataclass(slots=True)
class EdgeMaskSample:
    score: Tensor
    retention: Tensor
    mask: Tensor


def gate(e_i: Tensor, e_j: Tensor, params: DenoiseLayerParams) -> Tensor:
    """``sigmoid(W_g [e_i; e_j] + b)`` row-wise."""
    return sigmoid(add(matmul(concat([e_i, e_j], axis=1), params.w_gate), params.b_gate))


def adaptive_compose(
    e_i: Tensor,
    e_j: Tensor,
    a_ri: Tensor,
    params: DenoiseLayerParams,
    g: Tensor | None = None,
) -> Tensor:
    """
    Blend the transformed relational feature with the raw embedding.

    Returns ``g * tanh(W_embed [e_i; a_ri]) + (1 - g) * e_i``; ``g`` defaults
    to ``gate(e_i, e_j, params)``.
    """
    if g is None:
        g = gate(e_i, e_j, params)
    g = as_tensor(g)
    transformed = tanh(matmul(concat([e_i, a_ri], axis=1), params.w_embed))
    return add(mul(g, transformed), mul(sub(1.0, g), e_i))


def edge_score(
    e_i: Tensor,
    e_j: Tensor,
    a_i: Tensor,
    a_j: Tensor,
    params: DenoiseLayerParams,
    scorer: Scorer = "relation",
) -> Tensor:
    """
    Attention score per edge row.

    The relation-aware scorer feeds ``G(e_i, e_j) ⊕ G(e_j, e_i) ⊕ [e_i; e_j]``
    through a two-layer perceptron; the linear scorer applies one linear map
    to ``[e_i; e_j]``.
    """
    if scorer == "linear":
        features = concat([e_i, e_j], axis=1)
        return reshape(add(matmul(features, params.w_att1), params.b_att1), (-1,))
    if params.w_att2 is None or params.b_att2 is None:
        raise ValidationError("relation scorer needs a two-layer attention head")
    forward = adaptive_compose(e_i, e_j, a_i, params)
    backward = adaptive_compose(e_j, e_i, a_j, params)
    features = concat([forward, backward, e_i, e_j], axis=1)
    hidden = relu(add(matmul(features, params.w_att1), params.b_att1))
    return reshape(add(matmul(hidden, params.w_att2), params.b_att2), (-1,))


def hard_sigmoid(x: Tensor) -> Tensor:
    return clip(add(mul(0.2, x), 0.5), 0.0, 1.0)


def retention_probability(score: Tensor, theta: Tensor | float) -> Tensor:
    """
    Expected value of the rectified concrete mask at ``score`` and ``theta``.

    With logistic noise L the mask is ``clip(0.5 + 0.2 (s + L) / theta, 0, 1)``
    and its mean is ``(0.2 / theta) * (softplus(s + 2.5 theta) - softplus(s - 2.5 theta))``.
    """
    th = as_tensor(theta)
    half_width = mul(2.5, th)
    spread = sub(softplus(add(score, half_width)), softplus(sub(score, half_width)))
    return clip(mul(div(0.2, th), spread), 0.0, 1.0)


def concrete_sample(
    score: Tensor,
    theta: Tensor | float,
    rng: RandomStream | None = None,
    mode: Mode = "train",
) -> Tensor:
    """
    Rectified concrete edge mask.

    Train mode draws ``u ~ Uniform(0, 1)`` per edge and returns
    ``hard_sigmoid((s + logit(u)) / theta)``; eval mode is the deterministic
    ``hard_sigmoid(s / theta)``.

    Raises:
        ValidationError: If train mode has no rng or theta is not positive
    """
    th = as_tensor(theta)
    if np.any(th.data <= 0):
        raise ValidationError(f"theta must be positive, got {th.data}")
    if mode == "eval":
        return hard_sigmoid(div(score, th))
    if rng is None:
        raise ValidationError("train-mode concrete sampling needs an rng")
    u = np.clip(rng.random(score.shape), NOISE_CLAMP, 1.0 - NOISE_CLAMP)
    noise = constant(np.log(u) - np.log1p(-u))
    return hard_sigmoid(div(add(score, noise), th))


def concrete_edge_mask(
    score: Tensor,
    theta: Tensor,
    rng: RandomStream | None = None,
    mode: Mode = "train",
) -> EdgeMaskSample:
    return EdgeMaskSample(
        score=score,
        retention=retention_probability(score, theta),
        mask=concrete_sample(score, theta, rng, mode),
    )


def concrete_loss(
    retention: Sequence[Tensor], reduction: Literal["sum", "mean"] = "sum"
) -> Tensor:
    """
    Total drop probability ``sum_l sum_e (1 - p)`` over layers and edges.

    ``reduction="mean"`` divides by the number of (layer, edge) terms.
    """
    if not retention:
        return constant(0.0)
    total: Tensor = constant(0.0)
    count = 0
    for probs in retention:
        total = add(total, reduce_sum(sub(1.0, probs)))
        count += probs.size
    if reduction == "mean":
        return div(total, float(max(count, 1)))
    return total


def denoise_total_loss(
    lc: Tensor | float,
    bpr: Tensor | float,
    params: Iterable[Tensor],
    reg: float,
) -> Tensor:
    """``lc + bpr + reg * ||params||²``."""
    return add(add(lc, bpr), mul(reg, l2_penalty(params)))


def relational_features(
    adj: NormalizedAdjacency, user: Tensor, item: Tensor
) -> tuple[Tensor, Tensor]:
    """Mean of one-hop neighbor embeddings for every user and item."""
    return spmm(adj.user_mean, item), spmm(adj.item_mean, user)


def generate_denoised_view(
    adj: NormalizedAdjacency,
    user0: Tensor,
    item0: Tensor,
    params: DenoiseParams,
    rng: RandomStream | None = None,
    mode: Mode = "train",
) -> list[MaskedAdjacency]:
    """
    Build one masked adjacency per layer.

    Layer ``l`` scores edges from the embeddings produced by the masked
    layers before it, so masks are computed progressively. Each result
    carries the per-edge retention probabilities used by ``concrete_loss``.
    """
    edge_users = adj.edge_users()
    edge_items = adj.edge_items()
    user, item = user0, item0
    views: list[MaskedAdjacency] = []
    for layer, layer_params in enumerate(params.layers):
        a_user, a_item = relational_features(adj, user, item)
        e_u = gather(user, edge_users)
        e_v = gather(item, edge_items)
        score = edge_score(
            e_u,
            e_v,
            gather(a_user, edge_users),
            gather(a_item, edge_items),
            layer_params,
            params.scorer,
        )
        sample = concrete_edge_mask(score, layer_params.theta, rng, mode)
        view = apply_edge_mask(adj, sample.mask, layer=layer, retention=sample.retention)
        views.append(view)
        logger.debug(
            f"Denoise layer {layer}: {view.nonzero_count}/{adj.n_edges} edges kept"
        )
        user, item = propagate_layer(view, user, item)
    return views
