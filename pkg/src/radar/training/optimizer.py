"""Adam optimizer over named parameter slots."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from radar.core.validation import (
    ValidationError,
    validate_non_negative,
    validate_open_unit,
    validate_positive,
)
from radar.numerics.tensor import GradientMap, NumericError, Tensor, parameter

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class ParamSlot:
    """
    A named, replaceable parameter.

    Tensors are immutable, so an update stores a fresh leaf tensor on
    ``owner`` under ``attr``. ``attr`` is an attribute name, or an integer
    index when ``owner`` is a list.
    """

    name: str
    owner: Any
    attr: str | int

    @property
    def tensor(self) -> Tensor:
        if isinstance(self.attr, int):
            return self.owner[self.attr]
        return getattr(self.owner, self.attr)

    def assign(self, values: np.ndarray) -> None:
        fresh = parameter(values)
        if isinstance(self.attr, int):
            self.owner[self.attr] = fresh
        else:
            setattr(self.owner, self.attr, fresh)


def collect_parameters(obj: Any, prefix: str) -> list[ParamSlot]:
    """
    Every gradient-requiring tensor reachable from a dataclass.

    Nested dataclasses and lists are walked in field order; slot names are
    dotted paths such as ``denoiser.layers.0.w_gate``.
    """
    slots: list[ParamSlot] = []
    if is_dataclass(obj):
        for f in fields(obj):
            value = getattr(obj, f.name)
            path = f"{prefix}.{f.name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    slots.append(ParamSlot(path, obj, f.name))
            elif isinstance(value, list) or is_dataclass(value):
                slots.extend(collect_parameters(value, path))
    elif isinstance(obj, list):
        for i, value in enumerate(obj):
            path = f"{prefix}.{i}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    slots.append(ParamSlot(path, obj, i))
            else:
                slots.extend(collect_parameters(value, path))
    return slots


def parameter_checksum(slots: Iterable[ParamSlot]) -> str:
    """SHA-256 over slot names and raw values."""
    digest = hashlib.sha256()
    for slot in slots:
        digest.update(slot.name.encode("utf-8"))
        digest.update(np.ascontiguousarray(slot.tensor.data).tobytes())
    return digest.hexdigest()


def parameter_norms(slots: Iterable[ParamSlot]) -> dict[str, float]:
    return {slot.name: float(np.linalg.norm(slot.tensor.data)) for slot in slots}


@dataclass(frozen=True, slots=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        validate_non_negative(self.lr, "lr")
        validate_open_unit(self.beta1, "beta1")
        validate_open_unit(self.beta2, "beta2")
        validate_positive(self.eps, "eps")
        validate_non_negative(self.weight_decay, "weight_decay")


@dataclass(slots=True)
class AdamState:
    """First and second moment estimates keyed by slot name."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: Sequence[ParamSlot],
    grads: GradientMap | dict[str, np.ndarray],
    cfg: AdamConfig,
    state: AdamState | None = None,
) -> AdamState:
    """
    One Adam update with bias correction.

    ``grads`` is either the result of a backward pass (keyed by tensor) or a
    plain mapping from slot name to gradient array. Slots without a gradient
    are treated as having a zero gradient.

    Args:
        params: Slots to update in place
        grads: Gradients of the loss
        cfg: Step size, moment decays and weight decay
        state: Moment estimates from previous steps (created when None)

    Returns:
        The updated optimizer state

    Raises:
        NumericError: If any gradient is NaN or infinite
        ValidationError: If a gradient shape differs from its parameter
    """
    state = state if state is not None else AdamState()
    updates: list[tuple[ParamSlot, np.ndarray]] = []
    for slot in params:
        current = slot.tensor
        if isinstance(grads, GradientMap):
            grad = grads.array_for(current)
        else:
            grad = grads.get(slot.name, np.zeros(current.shape))
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != current.shape:
            raise ValidationError(
                f"gradient for {slot.name} has shape {grad.shape}, expected {current.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {slot.name}")
        updates.append((slot, grad))

    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for slot, grad in updates:
        value = slot.tensor.data
        if cfg.weight_decay:
            grad = grad + cfg.weight_decay * value
        m = state.m.get(slot.name)
        v = state.v.get(slot.name)
        m = (1.0 - cfg.beta1) * grad if m is None else cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = (
            (1.0 - cfg.beta2) * grad * grad
            if v is None
            else cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        )
        state.m[slot.name] = m
        state.v[slot.name] = v
        if cfg.lr == 0.0:
            continue
        step = cfg.lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
        slot.assign(value - step)
    return state


@dataclass(slots=True)
class Adam:
    """Adam bound to one parameter group."""

    params: list[ParamSlot]
    config: AdamConfig = field(default_factory=AdamConfig)
    state: AdamState = field(default_factory=AdamState)

    def tensors(self) -> list[Tensor]:
        return [slot.tensor for slot in self.params]

    def step(self, grads: GradientMap) -> None:
        self.state = optimizer_step(self.params, grads, self.config, self.state)
        logger.debug(f"Adam step {self.state.step} over {len(self.params)} tensors")
