"""Embedding-space diffusion: linear schedule, forward noising, reverse denoising."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Callable, Union

import numpy as np

from radar.core.validation import (
    ValidationError,
    validate_non_negative_int,
    validate_open_unit,
    validate_probability,
)
from radar.numerics.rng import RandomStream, glorot_uniform
from radar.numerics.tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    constant,
    matmul,
    mul,
    parameter,
    reduce_mean,
    reduce_sum,
    square,
    sub,
    tanh,
)

logger = logging.getLogger(__name__)

Timesteps = Union[int, np.ndarray]
Denoiser = Callable[[Tensor, np.ndarray], Tensor]


@dataclass(frozen=True, slots=True)
class NoiseSchedule:
    """
    Linear schedule on ``1 - alpha_bar``.

    Arrays are indexed by timestep with index 0 holding ``alpha_bar_0 = 1``;
    ``betas[0]`` is unused and zero.
    """

    steps: int
    scale: float
    alpha_low: float
    alpha_up: float
    one_minus_alpha_bar: np.ndarray
    alpha_bar: np.ndarray
    betas: np.ndarray
    posterior_mean_coef1: np.ndarray
    posterior_mean_coef2: np.ndarray
    posterior_variance: np.ndarray

    def check_step(self, t: Timesteps, low: int = 1) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(t, dtype=np.int64))
        if arr.size and (arr.min() < low or arr.max() > self.steps):
            raise ValidationError(
                f"timestep must lie in [{low}, {self.steps}], got {np.asarray(t).tolist()}"
            )
        return arr


def build_schedule(
    steps: int, scale: float, alpha_low: float, alpha_up: float
) -> NoiseSchedule:
    """
    Tabulate ``1 - alpha_bar_t = scale * (alpha_low + (t-1)/(T-1) * (alpha_up - alpha_low))``.

    Args:
        steps: Number of diffusion steps T (at least 2)
        scale: Noise scale s in [0, 1]
        alpha_low: Noise level at t=1, in (0, 1)
        alpha_up: Noise level at t=T, in (alpha_low, 1)

    Returns:
        NoiseSchedule with alpha_bar, betas and posterior coefficients

    Raises:
        ValidationError: If any parameter is out of range
    """
    if steps < 2:
        raise ValidationError(f"steps must be at least 2, got {steps}")
    validate_probability(scale, "scale")
    validate_open_unit(alpha_low, "alpha_low")
    validate_open_unit(alpha_up, "alpha_up")
    if not alpha_low < alpha_up:
        raise ValidationError(
            f"alpha_low must be below alpha_up, got {alpha_low} >= {alpha_up}"
        )

    ramp = np.arange(steps, dtype=np.float64) / (steps - 1)
    noise = np.concatenate(([0.0], scale * (alpha_low + ramp * (alpha_up - alpha_low))))
    alpha_bar = 1.0 - noise
    betas = np.zeros(steps + 1)
    betas[1:] = 1.0 - alpha_bar[1:] / alpha_bar[:-1]

    coef1 = np.zeros(steps + 1)
    coef2 = np.zeros(steps + 1)
    variance = np.zeros(steps + 1)
    active = noise[1:] > 0
    t = np.arange(1, steps + 1)[active]
    coef1[t] = betas[t] * np.sqrt(alpha_bar[t - 1]) / noise[t]
    coef2[t] = noise[t - 1] * np.sqrt(1.0 - betas[t]) / noise[t]
    variance[t] = betas[t] * noise[t - 1] / noise[t]

    return NoiseSchedule(
        steps=steps,
        scale=scale,
        alpha_low=alpha_low,
        alpha_up=alpha_up,
        one_minus_alpha_bar=noise,
        alpha_bar=alpha_bar,
        betas=betas,
        posterior_mean_coef1=coef1,
        posterior_mean_coef2=coef2,
        posterior_variance=variance,
    )


def timestep_encoding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encoding of integer timesteps, one row per entry of ``t``."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs.reshape(1, -1)
    enc = np.concatenate((np.sin(args), np.cos(args)), axis=1)
    if dim % 2:
        enc = np.concatenate((enc, np.zeros((enc.shape[0], 1))), axis=1)
    return enc


@dataclass(slots=True)
class DenoiserNet:
    """Two-layer tanh perceptron predicting ``x_0`` from ``(x_t, t)``."""

    w_in: Tensor
    b_in: Tensor
    w_out: Tensor
    b_out: Tensor
    time_dim: int = 16

    @classmethod
    def init(
        cls, dim: int, rng: RandomStream, hidden: int = 64, time_dim: int = 16
    ) -> DenoiserNet:
        return cls(
            w_in=parameter(glorot_uniform(rng, dim + time_dim, hidden)),
            b_in=parameter(np.zeros(hidden)),
            w_out=parameter(glorot_uniform(rng, hidden, dim)),
            b_out=parameter(np.zeros(dim)),
            time_dim=time_dim,
        )

    def __call__(self, x_t: Tensor, t: np.ndarray) -> Tensor:
        steps = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
        features = concat([x_t, constant(timestep_encoding(steps, self.time_dim))], axis=1)
        hidden = tanh(add(matmul(features, self.w_in), self.b_in))
        return add(matmul(hidden, self.w_out), self.b_out)

    def tensors(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self) if f.name != "time_dim"]


@dataclass(slots=True)
class DiffusionState:
    x0: Tensor
    x_t: Tensor
    t: int

    def __post_init__(self) -> None:
        validate_non_negative_int(self.t, "t")


def _column(values: np.ndarray, t: np.ndarray, rows: int) -> np.ndarray:
    picked = values[t]
    if picked.size == 1:
        return np.full((rows, 1), float(picked[0]))
    return picked.reshape(-1, 1)


def forward_sample(
    x0: Tensor | np.ndarray,
    t: Timesteps,
    schedule: NoiseSchedule,
    rng: RandomStream | None = None,
    eps: np.ndarray | None = None,
) -> Tensor:
    """
    Closed-form ``x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps``.

    ``t`` is one step for every row or an array with one step per row.
    Passing ``eps`` (e.g. zeros) overrides the rng.

    Raises:
        ValidationError: If t is outside [1, T] or no noise source is given
    """
    x = as_tensor(x0)
    steps = schedule.check_step(t)
    if eps is None:
        if rng is None:
            raise ValidationError("forward_sample needs an rng or explicit eps")
        eps = rng.standard_normal(x.shape)
    signal = np.sqrt(_column(schedule.alpha_bar, steps, x.shape[0]))
    spread = np.sqrt(_column(schedule.one_minus_alpha_bar, steps, x.shape[0]))
    return add(mul(x, constant(signal)), constant(spread * eps))


def forward_step(
    x_prev: Tensor | np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    rng: RandomStream,
) -> Tensor:
    """Stepwise kernel ``x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps``."""
    x = as_tensor(x_prev)
    schedule.check_step(t)
    beta = float(schedule.betas[t])
    noise = rng.standard_normal(x.shape)
    return add(mul(x, math.sqrt(1.0 - beta)), constant(math.sqrt(beta) * noise))


def forward_diffuse(
    x0: Tensor,
    t: int,
    schedule: NoiseSchedule,
    rng: RandomStream | None = None,
    eps: np.ndarray | None = None,
) -> DiffusionState:
    if t == 0:
        return DiffusionState(x0=x0, x_t=x0, t=0)
    return DiffusionState(x0=x0, x_t=forward_sample(x0, t, schedule, rng, eps), t=t)


def reverse_step(
    x_t: Tensor,
    t: int,
    net: Denoiser,
    schedule: NoiseSchedule,
    rng: RandomStream | None = None,
) -> Tensor:
    """
    One ancestral step ``x_t -> x_{t-1}`` from the net's ``x_0`` prediction.

    The mean is the forward-process posterior mean given the predicted
    ``x_0``; the variance is the fixed posterior variance. Step 1, a missing
    rng, or a noiseless step return the mean alone.
    """
    schedule.check_step(t)
    if schedule.one_minus_alpha_bar[t] == 0.0:
        return x_t
    steps = np.full(x_t.shape[0], t, dtype=np.int64)
    x0_hat = net(x_t, steps)
    mean = add(
        mul(x0_hat, float(schedule.posterior_mean_coef1[t])),
        mul(x_t, float(schedule.posterior_mean_coef2[t])),
    )
    if t == 1 or rng is None:
        return mean
    std = math.sqrt(float(schedule.posterior_variance[t]))
    return add(mean, constant(std * rng.standard_normal(x_t.shape)))


def elbo_loss(
    x0: Tensor,
    net: Denoiser,
    schedule: NoiseSchedule,
    rng: RandomStream,
    t: np.ndarray | None = None,
) -> Tensor:
    """
    Mean over rows of ``||net(x_t, t) - x_0||²`` with ``t ~ Uniform{1..T}`` per row.

    Raises:
        ValidationError: If the batch is empty
    """
    if x0.shape[0] == 0:
        raise ValidationError("elbo_loss needs a non-empty batch")
    steps = rng.integers(1, schedule.steps + 1, size=x0.shape[0]) if t is None else t
    x_t = forward_sample(x0, steps, schedule, rng)
    pred = net(x_t, steps)
    return reduce_mean(reduce_sum(square(sub(pred, x0)), axis=1))


def denoise_embeddings(
    embeddings: Tensor,
    net: Denoiser,
    schedule: NoiseSchedule,
    steps: int,
    rng: RandomStream | None = None,
    deterministic: bool = False,
) -> Tensor:
    """
    Noise ``embeddings`` to step ``steps`` and run that many reverse steps.

    Deterministic mode uses zero noise in both directions.

    Raises:
        ValidationError: If steps exceeds T
    """
    validate_non_negative_int(steps, "steps")
    if steps > schedule.steps:
        raise ValidationError(f"steps must be at most {schedule.steps}, got {steps}")
    if steps == 0:
        return embeddings
    eps = np.zeros(embeddings.shape) if deterministic else None
    state = forward_diffuse(embeddings, steps, schedule, rng, eps)
    reverse_rng = None if deterministic else rng
    x = state.x_t
    for t in range(steps, 0, -1):
        x = reverse_step(x, t, net, schedule, reverse_rng)
    return x


def ddr_regularizer(
    item_emb: Tensor,
    net: Denoiser,
    schedule: NoiseSchedule,
    epoch: int,
    warmup_epochs: int,
    weight: float,
    rng: RandomStream,
) -> Tensor:
    """Weighted ELBO on item embeddings once ``epoch >= warmup_epochs``; zero before."""
    if epoch < warmup_epochs or weight == 0.0:
        return constant(0.0)
    return mul(weight, elbo_loss(item_emb, net, schedule, rng))
