"""Plain BPR matrix factorization reference model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from radar.core.encoder import (
    PropagationConfig,
    TrainIndex,
    bpr_loss,
    init_embeddings,
    sample_bpr_triples,
)
from radar.core.validation import ValidationError
from radar.data.dataset import TRAIN, VALID, InteractionDataset
from radar.evaluation.metrics import MetricReport, all_ranking_evaluate
from radar.numerics.rng import make_rng
from radar.numerics.tensor import Tape, add, gather, l2_penalty, mul
from radar.storage.metrics_log import MetricRecord
from radar.training.config import TrainConfig
from radar.training.optimizer import Adam, AdamConfig, collect_parameters
from radar.training.trainer import EmbeddingTables

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class BaselineResult:
    user: np.ndarray
    item: np.ndarray
    records: list[MetricRecord] = field(default_factory=list)
    report: MetricReport | None = None


def train_bpr_mf(ds: InteractionDataset, cfg: TrainConfig) -> BaselineResult:
    """
    Fit raw user/item tables on BPR with an L2 penalty on the batch rows.

    Uses the same batch size, learning rate, epoch count and seed as the
    graph model so the two are directly comparable; no propagation.

    Raises:
        ValidationError: If the config is invalid or the train split is empty
    """
    problems = cfg.validate()
    if problems:
        raise ValidationError("invalid config: " + "; ".join(problems))
    n_train = int(ds.mask(TRAIN).sum())
    if n_train == 0:
        raise ValidationError("train split is empty")

    emb = init_embeddings(
        ds.n_users,
        ds.n_items,
        PropagationConfig(n_layers=0, dim=cfg.dim),
        make_rng(cfg.seed, "baseline", "init"),
    )
    tables = EmbeddingTables(emb.user0, emb.item0)
    optimizer = Adam(collect_parameters(tables, "baseline"), AdamConfig(lr=cfg.lr))
    index = TrainIndex.from_dataset(ds)
    n_steps = max(1, math.ceil(n_train / cfg.batch_size))
    if cfg.max_steps_per_epoch > 0:
        n_steps = min(n_steps, cfg.max_steps_per_epoch)

    result = BaselineResult(user=np.array(tables.user.data), item=np.array(tables.item.data))
    for epoch in range(cfg.epochs):
        losses: list[float] = []
        for step in range(n_steps):
            rng = make_rng(cfg.seed, "baseline", epoch, step)
            triples = sample_bpr_triples(index, cfg.batch_size, rng)
            with Tape() as tape:
                users = gather(tables.user, np.unique(triples.users))
                items = gather(
                    tables.item, np.unique(np.concatenate((triples.positives, triples.negatives)))
                )
                loss = add(
                    bpr_loss(triples, tables.user, tables.item),
                    mul(cfg.reg, l2_penalty([users, items])),
                )
                grads = tape.backward(loss)
            optimizer.step(grads)
            losses.append(loss.item())

        user, item = np.array(tables.user.data), np.array(tables.item.data)
        report = all_ranking_evaluate(user, item, ds, cfg.ks, VALID)
        result.records.append(
            MetricRecord(
                epoch=epoch,
                kind="bpr-mf",
                values={"steps": n_steps, "loss": float(np.mean(losses))},
            )
        )
        result.records.append(MetricRecord(epoch=epoch, kind="valid", values=report.to_dict()))
        logger.info(f"BPR-MF epoch {epoch}: loss {np.mean(losses):.6f}")
        result.user, result.item, result.report = user, item, report
    return result
