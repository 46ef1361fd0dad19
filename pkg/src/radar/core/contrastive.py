"""Contrastive objectives: InfoNCE, diffusion-enhanced SSL, asymmetric and IB losses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Literal

import numpy as np

from radar.core.graph import NormalizedAdjacency
from radar.core.validation import ValidationError, validate_positive, validate_open_unit
from radar.numerics.rng import RandomStream, glorot_uniform
from radar.numerics.tensor import (
    Tensor,
    add,
    concat,
    constant,
    div,
    gather,
    logsumexp,
    matmul,
    mul,
    normalize_rows,
    parameter,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    row_dot,
    sub,
    transpose,
)

logger = logging.getLogger(__name__)

Side = Literal["user", "item"]
SELF_MASK = -1e9


@dataclass(slots=True)
class ViewEmbeddings:
    user: Tensor
    item: Tensor

    def side(self, side: Side) -> Tensor:
        return self.user if side == "user" else self.item

    def detach(self) -> ViewEmbeddings:
        return ViewEmbeddings(self.user.detach(), self.item.detach())


@dataclass(slots=True)
class ViewPair:
    """Two views of the same users and items with an InfoNCE temperature."""

    first: ViewEmbeddings
    second: ViewEmbeddings
    temperature: float = 0.2

    def __post_init__(self) -> None:
        validate_positive(self.temperature, "temperature")
        for side in ("user", "item"):
            a, b = self.first.side(side), self.second.side(side)  # type: ignore[arg-type]
            if a.shape[0] != b.shape[0]:
                raise ValidationError(
                    f"{side} views have {a.shape[0]} and {b.shape[0]} rows"
                )


def infonce_loss(pair: ViewPair, side: Side, rows: np.ndarray | None = None) -> Tensor:
    """
    In-batch InfoNCE on cosine similarity.

    Row ``k`` of the first view is scored against every selected row of the
    second view; the positive is row ``k`` itself and stays in the
    denominator. Averaged over rows.

    Raises:
        ValidationError: If no rows are selected
    """
    first, second = pair.first.side(side), pair.second.side(side)
    if rows is not None:
        first, second = gather(first, rows), gather(second, rows)
    if first.shape[0] == 0:
        raise ValidationError("infonce_loss needs at least one row")
    a = normalize_rows(first)
    b = normalize_rows(second)
    scale = 1.0 / pair.temperature
    logits = mul(matmul(a, transpose(b)), scale)
    positive = mul(row_dot(a, b), scale)
    return reduce_mean(sub(logsumexp(logits, axis=1), positive))


def ssl_loss(
    pair: ViewPair,
    user_rows: np.ndarray | None = None,
    item_rows: np.ndarray | None = None,
) -> Tensor:
    """User-side plus item-side InfoNCE."""
    return add(
        infonce_loss(pair, "user", user_rows),
        infonce_loss(pair, "item", item_rows),
    )


@dataclass(slots=True)
class DiffSslTerms:
    ssl: Tensor
    intra: Tensor
    inter: Tensor

    def combine(self, lambda1: float, lambda2: float) -> Tensor:
        return add(add(self.ssl, mul(lambda1, self.intra)), mul(lambda2, self.inter))


def diff_ssl_terms(
    v1: ViewEmbeddings,
    v2: ViewEmbeddings,
    v1_den: ViewEmbeddings,
    v2_den: ViewEmbeddings,
    temperature: float,
    user_rows: np.ndarray | None = None,
    item_rows: np.ndarray | None = None,
) -> DiffSslTerms:
    """
    Cross-view, intra-view and inter-view InfoNCE terms.

    ``intra`` averages each view against its own denoised version and
    ``inter`` contrasts the two denoised views; each sums both sides.
    """
    ssl = ssl_loss(ViewPair(v1, v2, temperature), user_rows, item_rows)
    intra = mul(
        0.5,
        add(
            ssl_loss(ViewPair(v1, v1_den, temperature), user_rows, item_rows),
            ssl_loss(ViewPair(v2, v2_den, temperature), user_rows, item_rows),
        ),
    )
    inter = ssl_loss(ViewPair(v1_den, v2_den, temperature), user_rows, item_rows)
    return DiffSslTerms(ssl=ssl, intra=intra, inter=inter)


def diff_ssl_loss(
    v1: ViewEmbeddings,
    v2: ViewEmbeddings,
    v1_den: ViewEmbeddings,
    v2_den: ViewEmbeddings,
    lambda1: float,
    lambda2: float,
    temperature: float,
    user_rows: np.ndarray | None = None,
    item_rows: np.ndarray | None = None,
) -> Tensor:
    """``ssl + lambda1 * intra + lambda2 * inter``."""
    terms = diff_ssl_terms(v1, v2, v1_den, v2_den, temperature, user_rows, item_rows)
    return terms.combine(lambda1, lambda2)


@dataclass(frozen=True, slots=True)
class AclBatch:
    """
    Anchor/neighbor pairs over the joint node index space.

    Users occupy indices ``[0, N)`` and items ``[N, N + M)``. Pair ``k``
    links ``anchors[pair_anchor[k]]`` to context node ``pair_context[k]``
    with weight ``pair_weight[k]``; the loss divides by ``normalizer``.
    """

    anchors: np.ndarray
    pair_anchor: np.ndarray
    pair_context: np.ndarray
    pair_weight: np.ndarray
    normalizer: float
    use_negatives: bool = True
    skipped_isolated: int = 0

    def __len__(self) -> int:
        return int(self.anchors.shape[0])


def _joint_edges(adj: NormalizedAdjacency) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    users = adj.edge_users()
    items = adj.edge_items() + adj.n_users
    src = np.concatenate((users, items))
    dst = np.concatenate((items, users))
    degree = np.bincount(src, minlength=adj.n_users + adj.n_items)
    return src, dst, degree


def full_acl_batch(adj: NormalizedAdjacency, negatives: bool = True) -> AclBatch:
    """Every non-isolated node as an anchor with all of its neighbors."""
    src, dst, degree = _joint_edges(adj)
    anchors = np.flatnonzero(degree > 0)
    position = np.full(degree.shape[0], -1, dtype=np.int64)
    position[anchors] = np.arange(anchors.shape[0])
    skipped = int((degree == 0).sum())
    if skipped:
        logger.warning(f"Skipping {skipped} isolated node(s) in asymmetric contrastive loss")
    return AclBatch(
        anchors=anchors,
        pair_anchor=position[src],
        pair_context=dst,
        pair_weight=1.0 / degree[src],
        normalizer=float(max(anchors.shape[0], 1)),
        use_negatives=negatives,
        skipped_isolated=skipped,
    )


def sample_acl_batch(
    adj: NormalizedAdjacency,
    batch_size: int,
    rng: RandomStream,
    negatives: bool = True,
) -> AclBatch:
    """
    Uniform non-isolated anchors, each paired with one uniform neighbor.

    Raises:
        ValidationError: If the graph has no edges
    """
    src, dst, degree = _joint_edges(adj)
    candidates = np.flatnonzero(degree > 0)
    if candidates.size == 0:
        raise ValidationError("asymmetric contrastive batch needs a non-empty graph")
    size = min(batch_size, candidates.size)
    anchors = np.sort(rng.choice(candidates, size=size, replace=False))

    order = np.argsort(src, kind="stable")
    starts = np.concatenate(([0], np.cumsum(degree)[:-1]))
    offsets = np.floor(rng.random(size) * degree[anchors]).astype(np.int64)
    context = dst[order][starts[anchors] + offsets]
    return AclBatch(
        anchors=anchors,
        pair_anchor=np.arange(size, dtype=np.int64),
        pair_context=context,
        pair_weight=np.ones(size),
        normalizer=float(size),
        use_negatives=negatives,
        skipped_isolated=int((degree == 0).sum()),
    )


@dataclass(slots=True)
class Predictor:
    """Two-layer perceptron ``g(x) = relu(x W1 + b1) W2 + b2``."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, dim: int, rng: RandomStream) -> Predictor:
        return cls(
            w1=parameter(glorot_uniform(rng, dim, dim)),
            b1=parameter(np.zeros(dim)),
            w2=parameter(glorot_uniform(rng, dim, dim)),
            b2=parameter(np.zeros(dim)),
        )

    def __call__(self, x: Tensor) -> Tensor:
        hidden = relu(add(matmul(x, self.w1), self.b1))
        return add(matmul(hidden, self.w2), self.b2)

    def tensors(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self)]


def joint_nodes(emb: ViewEmbeddings) -> Tensor:
    return concat([emb.user, emb.item], axis=0)


def acl_loss(
    batch: AclBatch,
    identity: ViewEmbeddings,
    context: ViewEmbeddings,
    predictor: Predictor,
    temperature: float,
) -> Tensor:
    """
    Asymmetric contrastive loss.

    For anchor ``v`` with prediction ``p = g(v)`` and neighbor context ``u``
    the per-pair term is ``-log(exp(p·u/τ) / (exp(p·u/τ) + Σ exp(v·v'/τ)))``
    where ``v'`` ranges over the other anchors of the batch (identity
    representations on both sides). Pair terms are weighted by
    ``1/|N(v)|`` and the sum is divided by the anchor count.

    Raises:
        ValidationError: If the batch is empty or temperature is not positive
    """
    validate_positive(temperature, "temperature")
    if len(batch) == 0:
        raise ValidationError("acl_loss needs at least one anchor")
    scale = 1.0 / temperature
    v = gather(joint_nodes(identity), batch.anchors)
    p = predictor(v)
    u = gather(joint_nodes(context), batch.pair_context)
    positive = mul(row_dot(gather(p, batch.pair_anchor), u), scale)

    if batch.use_negatives:
        n = len(batch)
        sims = mul(matmul(v, transpose(v)), scale)
        masked = add(sims, constant(np.diag(np.full(n, SELF_MASK))))
        negative = gather(logsumexp(masked, axis=1), batch.pair_anchor)
        stacked = concat(
            [reshape(positive, (-1, 1)), reshape(negative, (-1, 1))], axis=1
        )
        per_pair = sub(logsumexp(stacked, axis=1), positive)
    else:
        per_pair = sub(positive, positive)

    weighted = reduce_sum(mul(per_pair, constant(batch.pair_weight)))
    return div(weighted, batch.normalizer)


@dataclass(slots=True)
class AclParams:
    """Predictor plus momentum target tables (never differentiated)."""

    predictor: Predictor
    target_user: np.ndarray
    target_item: np.ndarray
    decay: float = 0.99

    def __post_init__(self) -> None:
        validate_open_unit(self.decay, "decay")

    @classmethod
    def init(
        cls, user0: Tensor, item0: Tensor, rng: RandomStream, decay: float = 0.99
    ) -> AclParams:
        return cls(
            predictor=Predictor.init(user0.shape[1], rng),
            target_user=np.array(user0.data),
            target_item=np.array(item0.data),
            decay=decay,
        )

    def tensors(self) -> list[Tensor]:
        return self.predictor.tensors()


def ema_update(params: AclParams, user0: Tensor, item0: Tensor) -> None:
    """``target = decay * target + (1 - decay) * online`` in place."""
    keep = params.decay
    params.target_user = keep * params.target_user + (1.0 - keep) * user0.data
    params.target_item = keep * params.target_item + (1.0 - keep) * item0.data


@dataclass(slots=True)
class HistoricalState:
    """Exponential moving average of node representations, refreshed per epoch."""

    user: np.ndarray
    item: np.ndarray
    decay: float = 0.9

    def __post_init__(self) -> None:
        validate_open_unit(self.decay, "decay")

    @classmethod
    def initialize(cls, current: ViewEmbeddings, decay: float = 0.9) -> HistoricalState:
        return cls(np.array(current.user.data), np.array(current.item.data), decay)

    def update(self, current: ViewEmbeddings) -> None:
        self.user = self.decay * self.user + (1.0 - self.decay) * current.user.data
        self.item = self.decay * self.item + (1.0 - self.decay) * current.item.data

    def embeddings(self) -> ViewEmbeddings:
        return ViewEmbeddings(constant(self.user), constant(self.item))


def ib_loss(
    batch: AclBatch,
    current_gen: ViewEmbeddings,
    current_den: ViewEmbeddings,
    historical: HistoricalState,
    predictor: Predictor,
    temperature: float,
    lambda_ratio: float,
) -> Tensor:
    """
    Information-bottleneck loss over both generated views.

    The historical representations take the identity role and each view's
    current representations the context role; the denoised-view term is
    weighted by ``lambda_ratio``.
    """
    past = historical.embeddings()
    gen_term = acl_loss(batch, past, current_gen, predictor, temperature)
    if lambda_ratio == 0.0:
        return gen_term
    den_term = acl_loss(batch, past, current_den, predictor, temperature)
    return add(gen_term, mul(lambda_ratio, den_term))
