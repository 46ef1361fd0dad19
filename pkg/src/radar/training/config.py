from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any, Literal, get_args

Variant = Literal["full", "gen+gen", "gen+linear", "no-dacl", "acl-only"]
DiffuseSide = Literal["user", "item", "both"]

VALID_VARIANTS = get_args(Variant)
VALID_DIFFUSE_SIDES = get_args(DiffuseSide)


@dataclass(slots=True)
class TrainConfig:
    """
    Every hyperparameter of a training run.

    Defaults target the desk-scale synthetic corpus; a Last.FM run typically
    uses ``dim=64`` and ``n_layers=3``.
    """

    # backbone
    dim: int = 32
    n_layers: int = 2
    use_weights: bool = False

    # contrastive objectives
    temperature: float = 0.2
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 0.1
    lambda4: float = 1e-5
    lambda_ratio: float = 5.5
    reg: float = 1e-5

    # optimization
    batch_size: int = 1024
    lr: float = 1e-3
    generator_lr: float = 1e-3
    epochs: int = 10
    phase1_epochs: int = 1
    phase2_epochs: int = 1
    phase3_epochs: int = 1
    max_steps_per_epoch: int = 0
    ema_decay: float = 0.9
    target_decay: float = 0.99

    # diffusion
    diffusion_steps: int = 50
    inference_steps: int = 5
    noise_scale: float = 0.5
    alpha_low: float = 0.01
    alpha_up: float = 0.2
    diffusion_hidden: int = 64
    time_dim: int = 16
    diffuse_side: DiffuseSide = "both"
    warmup_epochs: int = 5
    ddr_weight: float = 0.01

    # view generators
    theta0: float = 1.0
    hard_view: bool = False
    variant: Variant = "full"

    # run
    seed: int = 0
    ks: tuple[int, ...] = (20, 40)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["ks"] = list(self.ks)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        """
        Build a config from a mapping of field name to value.

        Values may be strings (as read from a config file or environment);
        they are coerced to the type of the field's default. Unknown keys
        raise KeyError.
        """
        defaults = cls()
        known = {f.name for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key not in known:
                raise KeyError(f"unknown config key: {key}")
            kwargs[key] = coerce_value(getattr(defaults, key), value, key)
        return cls(**kwargs)

    def validate(self) -> list[str]:
        """Return every problem with this config; empty when valid."""
        problems: list[str] = []

        def need(cond: bool, message: str) -> None:
            if not cond:
                problems.append(message)

        for name in ("dim", "batch_size", "diffusion_steps", "diffusion_hidden", "time_dim"):
            need(getattr(self, name) >= 1, f"{name} must be at least 1")
        for name in (
            "n_layers",
            "epochs",
            "phase1_epochs",
            "phase2_epochs",
            "phase3_epochs",
            "max_steps_per_epoch",
            "inference_steps",
            "warmup_epochs",
        ):
            need(getattr(self, name) >= 0, f"{name} must be non-negative")
        for name in ("temperature", "theta0"):
            need(getattr(self, name) > 0, f"{name} must be positive")
        for name in (
            "lambda1",
            "lambda2",
            "lambda3",
            "lambda4",
            "lambda_ratio",
            "reg",
            "lr",
            "generator_lr",
            "ddr_weight",
        ):
            need(getattr(self, name) >= 0, f"{name} must be non-negative")
        for name in ("ema_decay", "target_decay"):
            need(0.0 < getattr(self, name) < 1.0, f"{name} must lie in (0, 1)")

        need(self.diffusion_steps >= 2, "diffusion_steps must be at least 2")
        need(
            self.inference_steps <= self.diffusion_steps,
            "inference_steps must not exceed diffusion_steps",
        )
        need(0.0 <= self.noise_scale <= 1.0, "noise_scale must lie in [0, 1]")
        need(
            0.0 < self.alpha_low < self.alpha_up < 1.0,
            "alpha_low and alpha_up must satisfy 0 < alpha_low < alpha_up < 1",
        )
        need(
            self.variant in VALID_VARIANTS,
            f"variant must be one of {', '.join(VALID_VARIANTS)}",
        )
        need(
            self.diffuse_side in VALID_DIFFUSE_SIDES,
            f"diffuse_side must be one of {', '.join(VALID_DIFFUSE_SIDES)}",
        )
        need(len(self.ks) > 0 and all(k >= 1 for k in self.ks), "ks must be positive")
        return problems


def coerce_value(default: Any, value: Any, key: str = "value") -> Any:
    """Convert ``value`` to the type of ``default``; strings are parsed."""
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                parts = [p for p in value.replace(" ", "").split(",") if p]
                return tuple(int(p) for p in parts)
            return tuple(int(v) for v in value)
        return str(value).strip()
    except (TypeError, ValueError) as e:
        raise ValueError(f"invalid value for {key}: {value!r}") from e
