"""Noise-injection robustness sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from radar.core.validation import ValidationError
from radar.data.dataset import InteractionDataset, NoiseSpec, inject_noise
from radar.evaluation.metrics import MetricReport
from radar.training.config import VALID_VARIANTS, TrainConfig
from radar.training.trainer import final_test_report, train

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.05, 0.10, 0.15, 0.20, 0.25)
DEFAULT_VARIANTS = ("full", "gen+gen")


@dataclass(slots=True)
class RobustnessRow:
    variant: str
    ratio: float
    seed: int
    report: MetricReport
    degradation: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"variant": self.variant, "ratio": self.ratio, "seed": self.seed}
        data.update(self.report.to_dict())
        for key, value in self.degradation.items():
            data[f"degradation_{key}"] = value
        return data


@dataclass(slots=True)
class RobustnessReport:
    rows: list[RobustnessRow] = field(default_factory=list)
    clean: dict[tuple[str, int], MetricReport] = field(default_factory=dict)
    monotone: dict[str, bool] = field(default_factory=dict)

    def mean_degradation(self, variant: str, ratio: float, key: str = "recall@20") -> float:
        values = [
            row.degradation[key]
            for row in self.rows
            if row.variant == variant and row.ratio == ratio
        ]
        if not values:
            raise KeyError(f"no rows for {variant} at ratio {ratio}")
        return float(np.mean(values))


def relative_degradation(clean: MetricReport, noisy: MetricReport) -> dict[str, float]:
    """``(clean - noisy) / clean`` per metric; 0 where the clean value is 0."""
    out: dict[str, float] = {}
    for k in clean.ks:
        for name, ref, value in (
            (f"recall@{k}", clean.recall[k], noisy.recall[k]),
            (f"ndcg@{k}", clean.ndcg[k], noisy.ndcg[k]),
        ):
            out[name] = (ref - value) / ref if ref > 0 else 0.0
    return out


def _train_and_test(ds: InteractionDataset, cfg: TrainConfig) -> MetricReport:
    return final_test_report(train(ds, cfg), ds, cfg)


def noise_robustness_sweep(
    ds: InteractionDataset,
    cfg: TrainConfig,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    variants: Sequence[str] = DEFAULT_VARIANTS,
    seeds: Sequence[int] = (0,),
) -> RobustnessReport:
    """
    Train every variant on noise-injected copies of ``ds`` and compare to clean.

    For each seed the clean run (ratio 0) is always trained as the reference;
    it appears as a row only when 0 is among ``ratios``. Spurious edges only
    replace train edges, so every run is scored on the same test split.
    A per-variant monotone-degradation flag is logged, not enforced.

    Args:
        ds: Split dataset
        cfg: Base config; ``variant`` and ``seed`` are overridden per run
        ratios: Noise ratios to sweep, each in [0, 0.5]
        variants: Model variants to compare
        seeds: Seeds for both noise injection and training

    Raises:
        ValidationError: If a variant is unknown or no variant is given
    """
    if not variants:
        raise ValidationError("at least one variant is required")
    unknown = [v for v in variants if v not in VALID_VARIANTS]
    if unknown:
        raise ValidationError(
            f"unknown variant(s) {', '.join(unknown)}; valid: {', '.join(VALID_VARIANTS)}"
        )
    specs = [NoiseSpec(ratio=float(r)) for r in ratios]

    report = RobustnessReport()
    for variant in variants:
        for seed in seeds:
            run_cfg = replace(cfg, variant=variant, seed=seed)
            clean = _train_and_test(ds, run_cfg)
            report.clean[(variant, seed)] = clean
            for spec in specs:
                if spec.ratio == 0:
                    noisy = clean
                else:
                    noisy_ds = inject_noise(ds, NoiseSpec(spec.ratio, seed))
                    noisy = _train_and_test(noisy_ds, run_cfg)
                row = RobustnessRow(
                    variant=variant,
                    ratio=spec.ratio,
                    seed=seed,
                    report=noisy,
                    degradation=relative_degradation(clean, noisy),
                )
                report.rows.append(row)
                logger.info(
                    f"{variant} seed {seed} ratio {spec.ratio:.2f}: "
                    f"recall@{clean.ks[0]}={noisy.recall[clean.ks[0]]:.4f}"
                )

        report.monotone[variant] = _is_monotone(report, variant, cfg.ks[0])
        if not report.monotone[variant]:
            logger.warning(f"{variant}: recall does not decrease monotonically with noise")
    return report


def _is_monotone(report: RobustnessReport, variant: str, k: int) -> bool:
    by_ratio: dict[float, list[float]] = {0.0: []}
    for (name, _seed), clean in report.clean.items():
        if name == variant:
            by_ratio[0.0].append(clean.recall[k])
    for row in report.rows:
        if row.variant == variant and row.ratio > 0:
            by_ratio.setdefault(row.ratio, []).append(row.report.recall[k])
    means = [float(np.mean(by_ratio[r])) for r in sorted(by_ratio)]
    return all(b <= a for a, b in zip(means, means[1:]))
