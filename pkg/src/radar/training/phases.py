from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Literal, get_args

from radar.training.config import TrainConfig

PhaseName = Literal["joint", "bottleneck", "generators"]
ParamGroup = Literal["backbone", "diffusion", "predictor", "generators"]

VALID_PHASES = get_args(PhaseName)
VALID_GROUPS = get_args(ParamGroup)


@dataclass(frozen=True, slots=True)
class Phase:
    """
    One training phase.

    ``trainable`` lists the parameter groups the phase may update; every
    other group must be bit-identical before and after the phase.
    """

    name: PhaseName
    objective: str
    trainable: tuple[ParamGroup, ...]
    epochs: int = 1

    @property
    def frozen(self) -> tuple[ParamGroup, ...]:
        return tuple(g for g in VALID_GROUPS if g not in self.trainable)


@dataclass(frozen=True, slots=True)
class PhaseSchedule:
    phases: tuple[Phase, ...]

    def __iter__(self) -> Iterator[Phase]:
        return iter(self.phases)

    def __len__(self) -> int:
        return len(self.phases)

    def names(self) -> list[str]:
        return [p.name for p in self.phases]

    def get(self, name: PhaseName) -> Phase | None:
        for phase in self.phases:
            if phase.name == name:
                return phase
        return None


def build_schedule_for(cfg: TrainConfig) -> PhaseSchedule:
    """
    Ordered phases for one outer epoch.

    The joint phase trains the backbone on BPR plus the contrastive terms
    while the diffusion net learns on its own objective; the bottleneck
    phase trains the backbone and predictor; the generator phase trains the
    view generators with the backbone frozen. ``no-dacl`` has no bottleneck
    phase and ``acl-only`` no diffusion net.
    """
    joint_groups: tuple[ParamGroup, ...] = (
        ("backbone",) if cfg.variant in ("no-dacl", "acl-only") else ("backbone", "diffusion")
    )
    if cfg.variant in ("no-dacl", "acl-only"):
        joint_objective = "bpr + lambda3 * ssl + lambda4 * l2"
    else:
        joint_objective = "bpr + lambda3 * diff_ssl + lambda4 * l2 (+ elbo, ddr)"

    phases = [Phase("joint", joint_objective, joint_groups, cfg.phase1_epochs)]
    if cfg.variant == "acl-only":
        phases.append(
            Phase("bottleneck", "acl(online, target)", ("backbone", "predictor"), cfg.phase2_epochs)
        )
    elif cfg.variant != "no-dacl":
        phases.append(
            Phase("bottleneck", "ib", ("backbone", "predictor"), cfg.phase2_epochs)
        )
    phases.append(Phase("generators", "gen + den", ("generators",), cfg.phase3_epochs))
    return PhaseSchedule(tuple(phases))
