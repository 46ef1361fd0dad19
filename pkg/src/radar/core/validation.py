"""Scalar and sequence checks for hyperparameters, split fractions and bucket edges.

Helpers return the checked value so they can be used inline, and raise
ValidationError naming the field. ``TrainConfig.validate`` collects these
messages instead of stopping at the first one.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence


class ValidationError(ValueError):
    """Raised when an input or precondition check fails."""


def _require(value: float, field_name: str, ok: Callable[[float], bool], wanted: str) -> float:
    validate_finite(value, field_name)
    if not ok(value):
        raise ValidationError(f"{field_name} must be {wanted}, got {value}")
    return value


def validate_finite(value: float, field_name: str = "value") -> float:
    """
    Reject NaN and infinities.

    Raises:
        ValidationError: If ``value`` is NaN or infinite
    """
    if math.isnan(value):
        raise ValidationError(f"{field_name} must be finite, got NaN")
    if math.isinf(value):
        raise ValidationError(f"{field_name} must be finite, got {value}")
    return value


def validate_positive(value: float, field_name: str = "value") -> float:
    """Learning rates, temperatures, step sizes: finite and > 0."""
    return _require(value, field_name, lambda v: v > 0, "positive")


def validate_non_negative(value: float, field_name: str = "value") -> float:
    return _require(value, field_name, lambda v: v >= 0, "non-negative")


def validate_probability(value: float, field_name: str = "value") -> float:
    """Noise ratios and mixing shares, in [0, 1]."""
    return _require(value, field_name, lambda v: 0.0 <= v <= 1.0, "between 0 and 1")


def validate_open_unit(value: float, field_name: str = "value") -> float:
    """EMA decays, Adam betas and schedule endpoints, in (0, 1)."""
    return _require(value, field_name, lambda v: 0.0 < v < 1.0, "strictly between 0 and 1")


def validate_positive_int(value: int, field_name: str = "value") -> int:
    if value <= 0:
        raise ValidationError(f"{field_name} must be positive, got {value}")
    return value


def validate_non_negative_int(value: int, field_name: str = "value") -> int:
    if value < 0:
        raise ValidationError(f"{field_name} must be non-negative, got {value}")
    return value


def validate_fractions(
    fractions: Sequence[float], field_name: str = "fractions"
) -> tuple[float, ...]:
    """
    Check train/valid/test fractions.

    Each part is checked as ``fractions[i]`` so the message points at the
    bad entry. The sum must equal one within 1e-9.

    Raises:
        ValidationError: If a part is negative or not finite, or the sum is off
    """
    parts = tuple(
        float(validate_non_negative(part, f"{field_name}[{idx}]"))
        for idx, part in enumerate(fractions)
    )
    total = math.fsum(parts)
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"{field_name} must sum to 1, got {total}")
    return parts


def validate_increasing(
    values: Sequence[float], field_name: str = "values"
) -> tuple[float, ...]:
    """Degree-bucket boundaries must be strictly increasing."""
    if any(not cur > prev for prev, cur in zip(values, values[1:])):
        raise ValidationError(f"{field_name} must be strictly increasing, got {list(values)}")
    return tuple(values)
