"""Three-phase training loop: joint contrastive, bottleneck, view generators."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from radar.core.contrastive import (
    AclParams,
    HistoricalState,
    ViewEmbeddings,
    ViewPair,
    acl_loss,
    diff_ssl_terms,
    ema_update,
    full_acl_batch,
    ib_loss,
    sample_acl_batch,
    ssl_loss,
)
from radar.core.denoise import (
    DenoiseParams,
    concrete_loss,
    denoise_total_loss,
    generate_denoised_view,
)
from radar.core.diffusion import (
    DenoiserNet,
    NoiseSchedule,
    build_schedule,
    ddr_regularizer,
    denoise_embeddings,
    elbo_loss,
)
from radar.core.encoder import (
    BprTriples,
    EmbeddingState,
    PropagationConfig,
    TrainIndex,
    bpr_loss,
    init_embeddings,
    propagate,
    sample_bpr_triples,
)
from radar.core.graph import (
    MaskedAdjacency,
    NormalizedAdjacency,
    apply_edge_mask,
    build_normalized_adjacency,
)
from radar.core.validation import ValidationError
from radar.core.vgae import (
    VgaeParams,
    discriminative_loss,
    generate_view,
    kl_loss,
    vgae_encode,
    vgae_total_loss,
)
from radar.data.dataset import TEST, VALID, InteractionDataset
from radar.evaluation.metrics import MetricReport, all_ranking_evaluate
from radar.numerics.rng import make_rng
from radar.numerics.tensor import (
    NumericError,
    Tape,
    Tensor,
    add,
    concat,
    constant,
    gather,
    l2_penalty,
    mul,
)
from radar.storage.checkpoint import Checkpoint, checkpoint_path, save_checkpoint
from radar.storage.metrics_log import MetricRecord, append_records
from radar.storage.paths import METRICS_FILE_NAME
from radar.training.config import TrainConfig
from radar.training.optimizer import (
    Adam,
    AdamConfig,
    ParamSlot,
    collect_parameters,
    parameter_checksum,
    parameter_norms,
)
from radar.training.phases import ParamGroup, Phase, build_schedule_for

logger = logging.getLogger(__name__)

DIFFUSION_VARIANTS = ("full", "gen+gen", "gen+linear")


class TrainingAborted(RuntimeError):
    """Raised when a phase hits a non-finite value or touches frozen parameters."""

    def __init__(self, message: str, snapshot: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.snapshot = snapshot or {}


@dataclass(slots=True)
class EmbeddingTables:
    """Learnable layer-0 user and item tables of the backbone."""

    user: Tensor
    item: Tensor

    def state(self) -> EmbeddingState:
        return EmbeddingState(user0=self.user, item0=self.item)

    def frozen(self) -> EmbeddingState:
        return EmbeddingState(user0=self.user.detach(), item0=self.item.detach())


@dataclass(slots=True)
class Generators:
    """
    View generators.

    ``denoiser`` is the edge denoiser of the second view; the ``gen+gen``
    variant replaces it with a second variational generator in ``second``.
    """

    vgae: VgaeParams
    denoiser: DenoiseParams | None = None
    second: VgaeParams | None = None


@dataclass(slots=True)
class Views:
    """Frozen augmentation graphs used by the backbone phases."""

    generated: MaskedAdjacency
    denoised: MaskedAdjacency | list[MaskedAdjacency]


@dataclass(slots=True)
class TrainingState:
    adj: NormalizedAdjacency
    index: TrainIndex
    propagation: PropagationConfig
    tables: EmbeddingTables
    generators: Generators
    acl: AclParams
    diffusion: DenoiserNet | None = None
    schedule: NoiseSchedule | None = None
    historical: HistoricalState | None = None
    views: Views | None = None
    optimizers: dict[str, Adam] = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    view_draws: int = 0
    last_losses: list[float] = field(default_factory=list)

    def groups(self) -> dict[ParamGroup, list[ParamSlot]]:
        return {
            "backbone": collect_parameters(self.tables, "backbone"),
            "diffusion": collect_parameters(self.diffusion, "diffusion"),
            "predictor": collect_parameters(self.acl.predictor, "predictor"),
            "generators": collect_parameters(self.generators, "generators"),
        }

    def final_embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        """Propagated main-graph representations used for ranking."""
        out = propagate(self.adj, self.tables.frozen(), self.propagation)
        return np.array(out.final_user.data), np.array(out.final_item.data)


@dataclass(slots=True)
class TrainResult:
    state: TrainingState
    records: list[MetricRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_report: MetricReport | None = None
    best_user: np.ndarray | None = None
    best_item: np.ndarray | None = None


def _require_valid(cfg: TrainConfig) -> None:
    problems = cfg.validate()
    if problems:
        raise ValidationError("invalid config: " + "; ".join(problems))


def _freeze_view(view: MaskedAdjacency) -> MaskedAdjacency:
    retention = view.retention.detach() if view.retention is not None else None
    return apply_edge_mask(view.base, view.mask.detach(), view.layer, retention)


def init_state(ds: InteractionDataset, cfg: TrainConfig) -> TrainingState:
    """
    Build the graph, initialize every parameter group and generate the first views.

    Raises:
        ValidationError: If the config is invalid or the train split is empty
    """
    _require_valid(cfg)
    adj = build_normalized_adjacency(ds, cfg.use_weights)
    pcfg = PropagationConfig(n_layers=cfg.n_layers, dim=cfg.dim)
    emb = init_embeddings(ds.n_users, ds.n_items, pcfg, make_rng(cfg.seed, "init", "embeddings"))
    tables = EmbeddingTables(emb.user0, emb.item0)

    gen_rng = make_rng(cfg.seed, "init", "generators")
    generators = Generators(vgae=VgaeParams.init(cfg.dim, gen_rng))
    if cfg.variant == "gen+gen":
        generators.second = VgaeParams.init(cfg.dim, gen_rng)
    else:
        scorer = "linear" if cfg.variant == "gen+linear" else "relation"
        generators.denoiser = DenoiseParams.init(
            cfg.dim, cfg.n_layers, gen_rng, scorer=scorer, theta=cfg.theta0
        )

    diffusion = None
    schedule = None
    if cfg.variant in DIFFUSION_VARIANTS:
        diffusion = DenoiserNet.init(
            cfg.dim,
            make_rng(cfg.seed, "init", "diffusion"),
            hidden=cfg.diffusion_hidden,
            time_dim=cfg.time_dim,
        )
        schedule = build_schedule(
            cfg.diffusion_steps, cfg.noise_scale, cfg.alpha_low, cfg.alpha_up
        )

    acl = AclParams.init(
        tables.user, tables.item, make_rng(cfg.seed, "init", "predictor"), cfg.target_decay
    )
    state = TrainingState(
        adj=adj,
        index=TrainIndex.from_dataset(ds),
        propagation=pcfg,
        tables=tables,
        generators=generators,
        acl=acl,
        diffusion=diffusion,
        schedule=schedule,
    )
    groups = state.groups()
    backbone_cfg = AdamConfig(lr=cfg.lr)
    state.optimizers = {
        "backbone": Adam(groups["backbone"], backbone_cfg),
        "diffusion": Adam(groups["diffusion"], backbone_cfg),
        "predictor": Adam(groups["predictor"], backbone_cfg),
        "generators": Adam(groups["generators"], AdamConfig(lr=cfg.generator_lr)),
    }
    regenerate_views(state, cfg)
    logger.info(
        f"Initialized {cfg.variant} model: {ds.n_users} users, {ds.n_items} items, "
        f"{adj.n_edges} train edges, d={cfg.dim}, L={cfg.n_layers}"
    )
    return state


def regenerate_views(state: TrainingState, cfg: TrainConfig) -> Views:
    """Sample fresh augmentation graphs from the current generators and freeze them."""
    rng = make_rng(cfg.seed, "views", state.view_draws)
    state.view_draws += 1
    user, item = state.tables.user.detach(), state.tables.item.detach()
    gens = state.generators

    sample = vgae_encode(state.adj, user, item, gens.vgae, rng)
    generated = _freeze_view(generate_view(state.adj, sample, gens.vgae, rng, hard=cfg.hard_view))

    denoised: MaskedAdjacency | list[MaskedAdjacency]
    if gens.second is not None:
        second = vgae_encode(state.adj, user, item, gens.second, rng)
        denoised = _freeze_view(
            generate_view(state.adj, second, gens.second, rng, hard=cfg.hard_view)
        )
    else:
        assert gens.denoiser is not None
        masks = generate_denoised_view(state.adj, user, item, gens.denoiser, rng, mode="train")
        denoised = [_freeze_view(v) for v in masks]

    state.views = Views(generated=generated, denoised=denoised)
    kept = (
        denoised.nonzero_count
        if isinstance(denoised, MaskedAdjacency)
        else sum(v.nonzero_count for v in denoised)
    )
    logger.debug(
        f"Regenerated views (draw {state.view_draws}, epoch {state.epoch}): "
        f"denoised masks keep {kept} entries"
    )
    return state.views


def _view_embeddings(
    adj: MaskedAdjacency | list[MaskedAdjacency],
    tables: EmbeddingState,
    pcfg: PropagationConfig,
) -> ViewEmbeddings:
    out = propagate(adj, tables, pcfg)
    return ViewEmbeddings(out.final_user, out.final_item)


def _rows(view: ViewEmbeddings, user_rows: np.ndarray, item_rows: np.ndarray) -> ViewEmbeddings:
    return ViewEmbeddings(gather(view.user, user_rows), gather(view.item, item_rows))


def _diffuse(
    view: ViewEmbeddings,
    state: TrainingState,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> ViewEmbeddings:
    assert state.diffusion is not None and state.schedule is not None
    user, item = view.user, view.item
    if cfg.diffuse_side in ("user", "both"):
        user = denoise_embeddings(user, state.diffusion, state.schedule, cfg.inference_steps, rng)
    if cfg.diffuse_side in ("item", "both"):
        item = denoise_embeddings(item, state.diffusion, state.schedule, cfg.inference_steps, rng)
    return ViewEmbeddings(user, item)


def _steps(n_examples: int, batch_size: int, cap: int) -> int:
    steps = max(1, math.ceil(n_examples / batch_size))
    return min(steps, cap) if cap > 0 else steps


def _snapshot(state: TrainingState, phase: str, step: int) -> dict[str, Any]:
    norms: dict[str, float] = {}
    for slots in state.groups().values():
        norms.update(parameter_norms(slots))
    return {"phase": phase, "epoch": state.epoch, "step": step, "norms": norms}


def _guarded(state: TrainingState, phase: Phase, step: int, fn: Callable[[], float]) -> float:
    try:
        return fn()
    except (NumericError, FloatingPointError) as e:
        snapshot = _snapshot(state, phase.name, step)
        logger.error(f"Aborting {phase.name} phase at epoch {state.epoch}, step {step}: {e}")
        raise TrainingAborted(f"{phase.name} phase: {e}", snapshot) from e


def _isolated(
    state: TrainingState, phase: Phase, body: Callable[[], list[float]]
) -> list[float]:
    groups = state.groups()
    before = {g: parameter_checksum(groups[g]) for g in phase.frozen}
    losses = body()
    groups = state.groups()
    for g in phase.frozen:
        if parameter_checksum(groups[g]) != before[g]:
            raise TrainingAborted(
                f"{phase.name} phase modified frozen parameter group {g!r}",
                _snapshot(state, phase.name, -1),
            )
    return losses


def _phase(cfg: TrainConfig, name: str) -> Phase:
    phase = build_schedule_for(cfg).get(name)  # type: ignore[arg-type]
    if phase is None:
        raise ValidationError(f"variant {cfg.variant!r} has no {name} phase")
    return phase


def _joint_step(state: TrainingState, cfg: TrainConfig, step: int) -> float:
    rng = make_rng(cfg.seed, "joint", state.epoch, step)
    triples = sample_bpr_triples(state.index, cfg.batch_size, rng)
    pcfg = state.propagation
    views = state.views
    assert views is not None

    with Tape() as tape:
        live = state.tables.state()
        main = propagate(state.adj, live, pcfg)
        loss = bpr_loss(triples, main.final_user, main.final_item)
        user_rows = np.unique(triples.users)
        item_rows = np.unique(np.concatenate((triples.positives, triples.negatives)))

        if cfg.lambda3 > 0:
            v1 = _rows(_view_embeddings(views.generated, live, pcfg), user_rows, item_rows)
            v2 = _rows(_view_embeddings(views.denoised, live, pcfg), user_rows, item_rows)
            if state.diffusion is not None:
                terms = diff_ssl_terms(
                    v1,
                    v2,
                    _diffuse(v1, state, cfg, rng),
                    _diffuse(v2, state, cfg, rng),
                    cfg.temperature,
                )
                contrastive = terms.combine(cfg.lambda1, cfg.lambda2)
            else:
                contrastive = ssl_loss(ViewPair(v1, v2, cfg.temperature))
            loss = add(loss, mul(cfg.lambda3, contrastive))

        if cfg.lambda4 > 0:
            loss = add(loss, mul(cfg.lambda4, l2_penalty([live.user0, live.item0])))

        if cfg.ddr_weight > 0 and state.diffusion is not None and state.schedule is not None:
            ddr = ddr_regularizer(
                gather(main.final_item, item_rows),
                state.diffusion,
                state.schedule,
                state.epoch,
                cfg.warmup_epochs,
                cfg.ddr_weight,
                rng,
            )
            loss = add(loss, ddr)
        grads = tape.backward(loss)
    state.optimizers["backbone"].step(grads)

    if state.diffusion is not None and state.schedule is not None:
        parts = []
        if cfg.diffuse_side in ("user", "both"):
            parts.append(gather(main.final_user.detach(), user_rows))
        if cfg.diffuse_side in ("item", "both"):
            parts.append(gather(main.final_item.detach(), item_rows))
        x0 = constant(concat(parts, axis=0))
        with Tape() as tape:
            diff_rng = make_rng(cfg.seed, "diffusion", state.epoch, step)
            elbo = elbo_loss(x0, state.diffusion, state.schedule, diff_rng)
            diff_grads = tape.backward(elbo)
        state.optimizers["diffusion"].step(diff_grads)
        logger.debug(f"joint step {step}: loss={loss.item():.6f} elbo={elbo.item():.6f}")
    else:
        logger.debug(f"joint step {step}: loss={loss.item():.6f}")
    return loss.item()


def run_phase1(state: TrainingState, cfg: TrainConfig) -> TrainingState:
    """
    Train the backbone on ``bpr + lambda3 * contrastive + lambda4 * ||tables||²``.

    Variants with diffusion also fit the denoiser net on its ELBO with its
    own optimizer and add the warmup-gated diffusion regularizer on item
    representations. Views stay frozen throughout.

    Raises:
        TrainingAborted: On a non-finite value or a change to a frozen group
    """
    phase = _phase(cfg, "joint")
    losses = _isolated(
        state, phase, lambda: _run_epochs(state, cfg, phase, _joint_step, state.adj.n_edges)
    )
    _log_phase(state, phase, losses)
    return state


def _bottleneck_step(state: TrainingState, cfg: TrainConfig, step: int) -> float:
    adj = state.adj
    if cfg.batch_size >= adj.n_users + adj.n_items:
        batch = full_acl_batch(adj)
    else:
        rng = make_rng(cfg.seed, "bottleneck", state.epoch, step)
        batch = sample_acl_batch(adj, cfg.batch_size, rng)
    pcfg = state.propagation
    views = state.views
    assert views is not None

    with Tape() as tape:
        live = state.tables.state()
        if cfg.variant == "acl-only":
            online = propagate(state.adj, live, pcfg)
            target_tables = EmbeddingState(
                user0=constant(state.acl.target_user), item0=constant(state.acl.target_item)
            )
            target = propagate(state.adj, target_tables, pcfg)
            loss = acl_loss(
                batch,
                ViewEmbeddings(online.final_user, online.final_item),
                ViewEmbeddings(target.final_user, target.final_item),
                state.acl.predictor,
                cfg.temperature,
            )
        else:
            assert state.historical is not None
            loss = ib_loss(
                batch,
                _view_embeddings(views.generated, live, pcfg),
                _view_embeddings(views.denoised, live, pcfg),
                state.historical,
                state.acl.predictor,
                cfg.temperature,
                cfg.lambda_ratio,
            )
        grads = tape.backward(loss)
    state.optimizers["backbone"].step(grads)
    state.optimizers["predictor"].step(grads)
    if cfg.variant == "acl-only":
        ema_update(state.acl, state.tables.user, state.tables.item)
    logger.debug(f"bottleneck step {step}: loss={loss.item():.6f}")
    return loss.item()


def _current_embeddings(state: TrainingState) -> ViewEmbeddings:
    out = propagate(state.adj, state.tables.frozen(), state.propagation)
    return ViewEmbeddings(out.final_user, out.final_item)


def run_phase2(state: TrainingState, cfg: TrainConfig) -> TrainingState:
    """
    Train the backbone and predictor on the information-bottleneck loss.

    Historical representations are initialized from the current ones when
    missing and refreshed only after the phase ends. The ``acl-only``
    variant instead aligns online and momentum-target encoders.

    Raises:
        TrainingAborted: On a non-finite value or a change to a frozen group
        ValidationError: If the variant has no bottleneck phase
    """
    phase = _phase(cfg, "bottleneck")
    if cfg.variant != "acl-only" and state.historical is None:
        state.historical = HistoricalState.initialize(_current_embeddings(state), cfg.ema_decay)
    n_nodes = state.adj.n_users + state.adj.n_items
    losses = _isolated(
        state, phase, lambda: _run_epochs(state, cfg, phase, _bottleneck_step, n_nodes)
    )
    if state.historical is not None:
        state.historical.update(_current_embeddings(state))
    _log_phase(state, phase, losses)
    return state


def _generator_losses(
    state: TrainingState,
    cfg: TrainConfig,
    triples: BprTriples,
    rng: np.random.Generator,
) -> Tensor:
    gens = state.generators
    frozen = state.tables.frozen()
    pcfg = state.propagation

    def vgae_loss(params: VgaeParams) -> Tensor:
        sample = vgae_encode(state.adj, frozen.user0, frozen.item0, params, rng)
        view = generate_view(state.adj, sample, params)
        emb = _view_embeddings(view, frozen, pcfg)
        return vgae_total_loss(
            kl_loss(sample),
            discriminative_loss(sample, triples, params),
            bpr_loss(triples, emb.user, emb.item),
            params.tensors(),
            cfg.reg,
        )

    loss = vgae_loss(gens.vgae)
    if gens.second is not None:
        return add(loss, vgae_loss(gens.second))
    assert gens.denoiser is not None
    masks = generate_denoised_view(
        state.adj, frozen.user0, frozen.item0, gens.denoiser, rng, mode="train"
    )
    emb = _view_embeddings(masks, frozen, pcfg)
    retention = [m.retention for m in masks if m.retention is not None]
    den = denoise_total_loss(
        concrete_loss(retention, reduction="mean"),
        bpr_loss(triples, emb.user, emb.item),
        gens.denoiser.weight_tensors(),
        cfg.reg,
    )
    return add(loss, den)


def _generator_step(state: TrainingState, cfg: TrainConfig, step: int) -> float:
    rng = make_rng(cfg.seed, "generators", state.epoch, step)
    triples = sample_bpr_triples(state.index, cfg.batch_size, rng)
    with Tape() as tape:
        loss = _generator_losses(state, cfg, triples, rng)
        grads = tape.backward(loss)
    state.optimizers["generators"].step(grads)
    logger.debug(f"generators step {step}: loss={loss.item():.6f}")
    return loss.item()


def run_phase3(state: TrainingState, cfg: TrainConfig) -> TrainingState:
    """
    Train the view generators on ``L_gen + L_den`` with the backbone frozen,
    then regenerate the augmentation views for the next outer epoch.

    Raises:
        TrainingAborted: On a non-finite value or a change to a frozen group
    """
    phase = _phase(cfg, "generators")
    losses = _isolated(
        state, phase, lambda: _run_epochs(state, cfg, phase, _generator_step, state.adj.n_edges)
    )
    regenerate_views(state, cfg)
    _log_phase(state, phase, losses)
    return state


def _run_epochs(
    state: TrainingState,
    cfg: TrainConfig,
    phase: Phase,
    step_fn: Callable[[TrainingState, TrainConfig, int], float],
    n_examples: int,
) -> list[float]:
    losses: list[float] = []
    n_steps = _steps(n_examples, cfg.batch_size, cfg.max_steps_per_epoch)
    for inner in range(phase.epochs):
        for s in range(n_steps):
            step = inner * n_steps + s
            losses.append(_guarded(state, phase, step, lambda: step_fn(state, cfg, step)))
            state.step += 1
    return losses


def _log_phase(state: TrainingState, phase: Phase, losses: Sequence[float]) -> None:
    mean = float(np.mean(losses)) if losses else 0.0
    state.last_losses = list(losses)
    logger.info(
        f"Epoch {state.epoch} {phase.name}: {len(losses)} steps, mean loss {mean:.6f}"
    )


def _best_key(cfg: TrainConfig) -> int:
    return 20 if 20 in cfg.ks else cfg.ks[0]


def train(
    ds: InteractionDataset,
    cfg: TrainConfig,
    run_dir: Path | None = None,
) -> TrainResult:
    """
    Run ``cfg.epochs`` outer epochs of joint, bottleneck and generator phases.

    After every outer epoch the main-graph representations are ranked
    against the validation split; the best Recall@20 (or the first
    configured K) is kept and, with ``run_dir``, saved as
    ``epoch_<k>.ckpt``. Every record is also appended to
    ``run_dir/metrics.jsonl``.

    Args:
        ds: Split dataset
        cfg: Validated training config
        run_dir: Optional output directory for checkpoints and the metrics log

    Returns:
        TrainResult with the final state, the metrics records and the best
        validation epoch

    Raises:
        ValidationError: If the config is invalid
        TrainingAborted: If any phase aborts
    """
    state = init_state(ds, cfg)
    result = TrainResult(state=state)
    schedule = build_schedule_for(cfg)
    key = _best_key(cfg)
    runners = {"joint": run_phase1, "bottleneck": run_phase2, "generators": run_phase3}

    for epoch in range(cfg.epochs):
        state.epoch = epoch
        epoch_records: list[MetricRecord] = []
        for phase in schedule:
            runners[phase.name](state, cfg)
            losses = state.last_losses
            epoch_records.append(
                MetricRecord(
                    epoch=epoch,
                    kind=phase.name,
                    values={
                        "steps": len(losses),
                        "loss": float(np.mean(losses)) if losses else 0.0,
                    },
                )
            )

        user, item = state.final_embeddings()
        report = all_ranking_evaluate(user, item, ds, cfg.ks, VALID)
        epoch_records.append(MetricRecord(epoch=epoch, kind="valid", values=report.to_dict()))
        logger.info(f"Epoch {epoch} validation: recall@{key}={report.recall[key]:.4f}")

        if result.best_report is None or report.recall[key] > result.best_report.recall[key]:
            result.best_epoch = epoch
            result.best_report = report
            result.best_user, result.best_item = user, item
            if run_dir is not None:
                save_checkpoint(
                    checkpoint_path(run_dir, epoch),
                    Checkpoint(user=user, item=item, n_layers=cfg.n_layers),
                )

        result.records.extend(epoch_records)
        if run_dir is not None:
            append_records(run_dir / METRICS_FILE_NAME, epoch_records)

    state.epoch = cfg.epochs
    return result


def final_test_report(
    result: TrainResult, ds: InteractionDataset, cfg: TrainConfig
) -> MetricReport:
    """Rank the test split with the best-validation representations (final ones if none)."""
    if result.best_user is not None and result.best_item is not None:
        user, item = result.best_user, result.best_item
    else:
        user, item = result.state.final_embeddings()
    return all_ranking_evaluate(user, item, ds, cfg.ks, TEST)
