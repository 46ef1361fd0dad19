from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

import numpy as np
import typer

from radar.core.validation import ValidationError
from radar.data.dataset import (
    DEFAULT_BOUNDARIES,
    DEFAULT_FRACTIONS,
    TEST,
    VALID,
    VALID_AGGREGATIONS,
    VALID_FORMATS,
    VALID_REGIMES,
    default_aggregation,
    load_interactions,
    split_dataset,
)
from radar.data.synthetic import generate_synthetic, within_cluster_fraction
from radar.evaluation.metrics import (
    all_ranking_evaluate,
    degree_bucket_rows,
    rank_users,
    summarize,
)
from radar.evaluation.robustness import DEFAULT_RATIOS, noise_robustness_sweep
from radar.evaluation.significance import paired_significance
from radar.numerics.tensor import NumericError
from radar.storage.checkpoint import CheckpointError, load_checkpoint, resolve_checkpoint
from radar.storage.config import load_config, save_config
from radar.storage.datasets import load_prepared, save_prepared
from radar.storage.manifest import RunManifest, load_manifest, save_manifest, utc_now
from radar.storage.metrics_log import MetricsLogParseError, epoch_history, read_records
from radar.storage.paths import (
    CONFIG_FILE_NAME,
    MANIFEST_FILE_NAME,
    METRICS_FILE_NAME,
    get_base_dir,
    get_run_dir,
)
from radar.storage.reports import metric_columns, write_csv, write_jsonl
from radar.training.baseline import train_bpr_mf
from radar.training.config import VALID_VARIANTS, TrainConfig
from radar.training.trainer import TrainingAborted, final_test_report, train

logger = logging.getLogger(__name__)

app = typer.Typer(help="Graph-contrastive recommendation: prepare, train, evaluate, sweep.")

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass(slots=True)
class CliOptions:
    seed: int | None = None
    out: Path | None = None
    config: Path | None = None


def _options(ctx: typer.Context) -> CliOptions:
    return ctx.obj if isinstance(ctx.obj, CliOptions) else CliOptions()


@contextmanager
def _cli_errors() -> Iterator[None]:
    """Map library failures to exit code 2 (usage/validation) or 1 (runtime)."""
    try:
        yield
    except typer.Exit:
        raise
    except (ValidationError, CheckpointError, FileNotFoundError) as exc:
        typer.echo(f"Error: {exc}")
        raise typer.Exit(code=2)
    except (TrainingAborted, MetricsLogParseError, NumericError, RuntimeError, OSError) as exc:
        typer.echo(f"Error: {exc}")
        raise typer.Exit(code=1)


def _split_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _parse_ints(text: str, name: str) -> list[int]:
    try:
        return [int(v) for v in _split_list(text)]
    except ValueError as exc:
        raise typer.BadParameter(f"{name} must be comma-separated integers, got {text!r}") from exc


def _parse_floats(text: str, name: str) -> list[float]:
    try:
        return [float(v) for v in _split_list(text)]
    except ValueError as exc:
        raise typer.BadParameter(f"{name} must be comma-separated numbers, got {text!r}") from exc


def _parse_variants(text: str) -> list[str]:
    variants = _split_list(text)
    if not variants:
        raise ValidationError("at least one variant is required")
    unknown = [v for v in variants if v not in VALID_VARIANTS]
    if unknown:
        raise ValidationError(
            f"unknown variant(s): {', '.join(unknown)}. Valid: {', '.join(VALID_VARIANTS)}"
        )
    return variants


def _load_train_config(opts: CliOptions, **overrides: Any) -> TrainConfig:
    """Config file, environment, then ``--seed`` and command overrides; exits 2 on problems."""
    if opts.seed is not None:
        overrides.setdefault("seed", opts.seed)
    cfg = load_config(opts.config, overrides=overrides)
    problems = cfg.validate()
    if problems:
        typer.echo("Invalid configuration:")
        for problem in problems:
            typer.echo(f"  - {problem}")
        raise typer.Exit(code=2)
    return cfg


@app.callback()
def main(
    ctx: typer.Context,
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed overriding the config."),
    out: Optional[Path] = typer.Option(
        None, "--out", help="Output root (defaults to $RADAR_HOME, then ./run)."
    ),
    config: Optional[Path] = typer.Option(
        None, "--config", help="key = value config file with TrainConfig fields."
    ),
    log_level: str = typer.Option("WARNING", "--log-level", help="DEBUG, INFO, WARNING or ERROR."),
) -> None:
    """Global options shared by every command."""
    level = log_level.upper()
    if level not in LOG_LEVELS:
        raise typer.BadParameter(f"log level must be one of {', '.join(LOG_LEVELS)}")
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)
    if config is not None and not config.exists():
        typer.echo(f"Error: config file not found: {config}")
        raise typer.Exit(code=2)
    ctx.obj = CliOptions(seed=seed, out=out, config=config)


@app.command()
def prepare(
    ctx: typer.Context,
    data_path: Path = typer.Argument(..., help="Interaction file to ingest."),
    fmt: str = typer.Option("tsv", "--format", help=f"One of {', '.join(VALID_FORMATS)}."),
    regime: str = typer.Option("binary", help=f"One of {', '.join(VALID_REGIMES)}."),
    aggregation: Optional[str] = typer.Option(
        None,
        help=f"Weighted merge: {', '.join(VALID_AGGREGATIONS)} (sum for lastfm, else count).",
    ),
    dest: Optional[Path] = typer.Option(
        None, "--dest", help="Dataset directory (defaults to <out>/data)."
    ),
) -> None:
    """Load, deduplicate and split an interaction file into a dataset directory."""
    opts = _options(ctx)
    seed = opts.seed if opts.seed is not None else 0
    target = dest if dest is not None else get_base_dir(opts.out) / "data"
    with _cli_errors():
        if not data_path.exists():
            raise FileNotFoundError(f"input not found: {data_path}")
        if aggregation is None:
            aggregation = default_aggregation(fmt)  # type: ignore[arg-type]
        ds = load_interactions(data_path, fmt, regime, aggregation)  # type: ignore[arg-type]
        ds = split_dataset(ds, DEFAULT_FRACTIONS, seed=seed)
        manifest = save_prepared(
            target,
            ds,
            {"seed": seed, "source": data_path.name, "format": fmt, "aggregation": aggregation},
        )
    typer.echo(
        f"Prepared {manifest['n_interactions']} interactions "
        f"({manifest['n_users']} users, {manifest['n_items']} items) in {target}"
    )
    splits = manifest["splits"]
    typer.echo(f"Splits: train={splits['train']} valid={splits['valid']} test={splits['test']}")
    typer.echo(f"Checksum: {manifest['checksum']}")


@app.command()
def synthesize(
    ctx: typer.Context,
    users: int = typer.Option(200, help="Number of users."),
    items: int = typer.Option(200, help="Number of items."),
    clusters: int = typer.Option(4, help="Planted clusters."),
    edges_per_user: int = typer.Option(20, help="Interactions per user."),
    in_cluster: float = typer.Option(0.9, help="Share of each user's items inside its cluster."),
    dest: Optional[Path] = typer.Option(
        None, "--dest", help="Dataset directory (defaults to <out>/synthetic)."
    ),
) -> None:
    """Generate and split a planted-cluster corpus."""
    opts = _options(ctx)
    seed = opts.seed if opts.seed is not None else 0
    target = dest if dest is not None else get_base_dir(opts.out) / "synthetic"
    with _cli_errors():
        ds = generate_synthetic(users, items, clusters, edges_per_user, seed, in_cluster)
        ds = split_dataset(ds, DEFAULT_FRACTIONS, seed=seed)
        manifest = save_prepared(
            target, ds, {"seed": seed, "source": "synthetic", "clusters": clusters}
        )
    typer.echo(
        f"Synthesized {manifest['n_interactions']} interactions "
        f"({manifest['n_users']} users, {manifest['n_items']} items) in {target}"
    )
    typer.echo(f"Within-cluster share: {within_cluster_fraction(ds):.3f}")
    typer.echo(f"Checksum: {manifest['checksum']}")


@app.command("train")
def train_cmd(
    ctx: typer.Context,
    dataset: Path = typer.Argument(..., help="Prepared dataset directory."),
    name: str = typer.Option("train", help="Run name; outputs go to <out>/<name>."),
    epochs: Optional[int] = typer.Option(None, help="Override the epoch count."),
    variant: Optional[str] = typer.Option(None, help="Override the model variant."),
) -> None:
    """Train a model and write config, checkpoints, metrics.jsonl and manifest.json."""
    opts = _options(ctx)
    with _cli_errors():
        cfg = _load_train_config(opts, epochs=epochs, variant=variant)
        ds = load_prepared(dataset)
        run_dir = get_run_dir(name, opts.out)
        run_dir.mkdir(parents=True, exist_ok=True)
        for stale in [run_dir / METRICS_FILE_NAME, *run_dir.glob("epoch_*.ckpt")]:
            stale.unlink()
        save_config(run_dir / CONFIG_FILE_NAME, cfg)

        manifest = RunManifest(config=cfg.to_dict(), dataset_checksum=ds.checksum(), seed=cfg.seed)
        result = train(ds, cfg, run_dir)
        manifest.finished_at = utc_now()
        manifest.best_epoch = result.best_epoch
        if result.best_epoch is not None:
            manifest.checkpoint = f"epoch_{result.best_epoch}.ckpt"
            manifest.final_metrics = {
                "valid": result.best_report.to_dict() if result.best_report else {},
                "test": final_test_report(result, ds, cfg).to_dict(),
            }
        save_manifest(run_dir / MANIFEST_FILE_NAME, manifest)

    typer.echo(f"Run written to {run_dir}")
    if result.best_epoch is None:
        typer.echo("No epochs run; manifest only.")
        return
    test = manifest.final_metrics["test"]
    typer.echo(f"Best validation epoch: {result.best_epoch}")
    for k in cfg.ks:
        typer.echo(f"test recall@{k}={test[f'recall@{k}']:.4f} ndcg@{k}={test[f'ndcg@{k}']:.4f}")


@app.command()
def evaluate(
    ctx: typer.Context,
    checkpoint: Path = typer.Argument(..., help="epoch_<k>.ckpt file or a train run directory."),
    dataset: Path = typer.Argument(..., help="Prepared dataset directory."),
    ks: str = typer.Option("20,40", help="Comma-separated cutoffs."),
    part: str = typer.Option("test", help="Split to score: test or valid."),
    boundaries: str = typer.Option(
        ",".join(str(b) for b in DEFAULT_BOUNDARIES), help="Train-degree bucket edges."
    ),
    name: str = typer.Option("evaluate", help="Report name; outputs go to <out>/<name>."),
) -> None:
    """Score a checkpoint with all-ranking Recall@K and NDCG@K, overall and per degree bucket."""
    opts = _options(ctx)
    cutoffs = _parse_ints(ks, "ks")
    edges = _parse_floats(boundaries, "boundaries")
    if part not in ("test", "valid"):
        raise typer.BadParameter("part must be 'test' or 'valid'")
    with _cli_errors():
        manifest = load_manifest(checkpoint / MANIFEST_FILE_NAME) if checkpoint.is_dir() else None
        ckpt_path = resolve_checkpoint(checkpoint, manifest.checkpoint if manifest else None)
        ds = load_prepared(dataset)
        if manifest is not None and manifest.dataset_checksum != ds.checksum():
            logger.warning(f"{checkpoint} was trained on a different dataset than {dataset}")
        ckpt = load_checkpoint(ckpt_path)
        ckpt.check_compatible(ds.n_users, ds.n_items)
        split = TEST if part == "test" else VALID
        report = all_ranking_evaluate(ckpt.user, ckpt.item, ds, cutoffs, split)
        ranked = rank_users(ckpt.user, ckpt.item, ds, max(cutoffs), split)
        buckets = degree_bucket_rows(ranked, ds, report.ks, edges)

        out_dir = get_run_dir(name, opts.out)
        row = {"checkpoint": ckpt_path.name, **report.to_dict()}
        columns = metric_columns(report.ks)
        write_jsonl(out_dir / "evaluation.jsonl", [row])
        write_csv(out_dir / "evaluation.csv", [row], ["checkpoint", "part", "n_users", *columns])
        write_jsonl(out_dir / "sparsity.jsonl", buckets)
        write_csv(
            out_dir / "sparsity.csv", buckets, ["axis", "bucket", "n_ids", "n_users", *columns]
        )
    typer.echo(f"Checkpoint: {ckpt_path}")
    for k in report.ks:
        typer.echo(f"recall@{k}={report.recall[k]:.4f} ndcg@{k}={report.ndcg[k]:.4f}")
    k = report.ks[0]
    for bucket in buckets:
        value = bucket[f"recall@{k}"]
        shown = "-" if value is None else f"{value:.4f}"
        typer.echo(
            f"  {bucket['axis']} degree {bucket['bucket']}: "
            f"{bucket['n_users']} user(s), recall@{k}={shown}"
        )
    typer.echo(f"Report written to {out_dir}")


@app.command()
def history(
    ctx: typer.Context,
    run_dir: Path = typer.Argument(..., help="Train run directory."),
    strict: bool = typer.Option(False, "--strict", help="Fail on a malformed metrics line."),
) -> None:
    """Print per-epoch phase losses and validation metrics from a run's metrics.jsonl."""
    with _cli_errors():
        log_path = run_dir / METRICS_FILE_NAME
        if not log_path.exists():
            raise FileNotFoundError(f"no {METRICS_FILE_NAME} in {run_dir}")
        rows = epoch_history(read_records(log_path, strict=strict))
        manifest = load_manifest(run_dir / MANIFEST_FILE_NAME)
    best = manifest.best_epoch if manifest is not None else None
    for row in rows:
        cells = [f"{key}={value:.4f}" for key, value in row.items() if key != "epoch"]
        marker = " *" if row["epoch"] == best else ""
        typer.echo(f"epoch {row['epoch']}: {' '.join(cells)}{marker}")
    typer.echo(f"{len(rows)} epoch(s); best validation epoch: {best if best is not None else '-'}")


def _aggregate_rows(
    rows: Sequence[dict[str, Any]], group: str, columns: Sequence[str], reference: str | None
) -> list[dict[str, Any]]:
    """Mean and std rows per group value, plus a paired p-value against ``reference``."""
    out: list[dict[str, Any]] = []
    groups: dict[Any, list[dict[str, Any]]] = {}
    for row in rows:
        groups.setdefault(row[group], []).append(row)
    ref_rows = groups.get(reference, []) if reference is not None else []
    for key, members in groups.items():
        mean_row: dict[str, Any] = {group: key, "seed": "mean"}
        std_row: dict[str, Any] = {group: key, "seed": "std"}
        for column in columns:
            stats = summarize([m[column] for m in members])
            mean_row[column] = stats["mean"]
            std_row[column] = stats["std"]
        if reference is not None and key != reference and len(members) >= 2:
            if len(ref_rows) == len(members):
                first = columns[0]
                mean_row["p_value"] = paired_significance(
                    [m[first] for m in members], [r[first] for r in ref_rows]
                )
        out.extend([mean_row, std_row])
    return out


@app.command()
def ablate(
    ctx: typer.Context,
    dataset: Path = typer.Argument(..., help="Prepared dataset directory."),
    variants: str = typer.Option(",".join(VALID_VARIANTS), help="Comma-separated variants."),
    seeds: str = typer.Option("0", help="Comma-separated seeds."),
    baseline: bool = typer.Option(False, "--baseline", help="Also train the BPR-MF reference."),
    name: str = typer.Option("ablation", help="Report name; outputs go to <out>/<name>."),
) -> None:
    """Train each variant per seed and tabulate test metrics with mean/std rows."""
    opts = _options(ctx)
    seed_list = _parse_ints(seeds, "seeds")
    with _cli_errors():
        names = _parse_variants(variants)
        cfg = _load_train_config(opts)
        ds = load_prepared(dataset)
        columns = metric_columns(cfg.ks)
        rows: list[dict[str, Any]] = []
        for variant in names:
            for seed in seed_list:
                run_cfg = replace(cfg, variant=variant, seed=seed)  # type: ignore[arg-type]
                report = final_test_report(train(ds, run_cfg), ds, run_cfg)
                rows.append({"variant": variant, "seed": seed, **report.to_dict()})
                k = cfg.ks[0]
                typer.echo(f"{variant} seed {seed}: recall@{k}={report.recall[k]:.4f}")
        if baseline:
            for seed in seed_list:
                run_cfg = replace(cfg, seed=seed)
                base = train_bpr_mf(ds, run_cfg)
                report = all_ranking_evaluate(base.user, base.item, ds, cfg.ks, TEST)
                rows.append({"variant": "bpr-mf", "seed": seed, **report.to_dict()})
        reference = "full" if "full" in names else None
        table = rows + _aggregate_rows(rows, "variant", columns, reference)
        out_dir = get_run_dir(name, opts.out)
        write_jsonl(out_dir / "ablation.jsonl", table)
        write_csv(out_dir / "ablation.csv", table, ["variant", "seed", *columns, "p_value"])
    typer.echo(f"Ablation table written to {out_dir}")


@app.command()
def robustness(
    ctx: typer.Context,
    dataset: Path = typer.Argument(..., help="Prepared dataset directory."),
    ratios: str = typer.Option(
        ",".join(str(r) for r in DEFAULT_RATIOS), help="Comma-separated noise ratios."
    ),
    variants: str = typer.Option("full,gen+gen", help="Comma-separated variants."),
    seeds: str = typer.Option("0", help="Comma-separated seeds."),
    name: str = typer.Option("robustness", help="Report name; outputs go to <out>/<name>."),
) -> None:
    """Sweep injected-noise ratios and report absolute metrics and relative degradation."""
    opts = _options(ctx)
    ratio_list = _parse_floats(ratios, "ratios")
    seed_list = _parse_ints(seeds, "seeds")
    with _cli_errors():
        names = _parse_variants(variants)
        cfg = _load_train_config(opts)
        ds = load_prepared(dataset)
        report = noise_robustness_sweep(ds, cfg, ratio_list, names, seed_list)
        rows = [row.to_dict() for row in report.rows]
        out_dir = get_run_dir(name, opts.out)
        columns = [
            "variant",
            "ratio",
            "seed",
            *metric_columns(cfg.ks),
            *metric_columns(cfg.ks, prefix="degradation_"),
        ]
        write_jsonl(out_dir / "robustness.jsonl", rows)
        write_csv(out_dir / "robustness.csv", rows, columns)
    for variant, monotone in report.monotone.items():
        trend = "monotone" if monotone else "non-monotone"
        typer.echo(f"{variant}: {trend} degradation over {len(ratio_list)} ratio(s)")
    typer.echo(f"Robustness report written to {out_dir}")


@app.command("sweep-lambda")
def sweep_lambda(
    ctx: typer.Context,
    dataset: Path = typer.Argument(..., help="Prepared dataset directory."),
    values: str = typer.Option("1.0,3.5,5.5", help="Comma-separated lambda_ratio values."),
    seeds: str = typer.Option("0", help="Comma-separated seeds."),
    name: str = typer.Option("sweep-lambda", help="Report name; outputs go to <out>/<name>."),
) -> None:
    """Train the full model for each bottleneck weight ratio; rows sorted by ratio."""
    opts = _options(ctx)
    lambdas = sorted(_parse_floats(values, "values"))
    seed_list = _parse_ints(seeds, "seeds")
    with _cli_errors():
        if not lambdas or any(v <= 0 for v in lambdas):
            raise ValidationError("lambda values must be positive")
        cfg = _load_train_config(opts)
        ds = load_prepared(dataset)
        rows: list[dict[str, Any]] = []
        for value in lambdas:
            for seed in seed_list:
                run_cfg = replace(cfg, lambda_ratio=value, seed=seed)
                report = final_test_report(train(ds, run_cfg), ds, run_cfg)
                rows.append({"lambda_ratio": value, "seed": seed, **report.to_dict()})
        out_dir = get_run_dir(name, opts.out)
        write_jsonl(out_dir / "sweep_lambda.jsonl", rows)
        write_csv(
            out_dir / "sweep_lambda.csv", rows, ["lambda_ratio", "seed", *metric_columns(cfg.ks)]
        )
    best = max(rows, key=lambda r: r[f"recall@{cfg.ks[0]}"])
    typer.echo(
        f"{len(rows)} row(s); best lambda_ratio={best['lambda_ratio']} "
        f"(recall@{cfg.ks[0]}={best[f'recall@{cfg.ks[0]}']:.4f})"
    )
    typer.echo(f"Sweep written to {out_dir}")


if __name__ == "__main__":  # pragma: no cover
    app()
