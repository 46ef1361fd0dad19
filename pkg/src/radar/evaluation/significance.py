from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np
from scipy import stats

from radar.core.validation import ValidationError

logger = logging.getLogger(__name__)


def paired_significance(
    metrics_a: Sequence[float] | np.ndarray,
    metrics_b: Sequence[float] | np.ndarray,
) -> float:
    """
    Two-sided paired t-test p-value for aligned per-user (or per-seed) metrics.

    When every difference is identical the t statistic is undefined: a zero
    difference reports 1.0 and a non-zero constant difference reports 0.0.

    Raises:
        ValidationError: If the vectors differ in length or hold fewer than 2 pairs
    """
    a = np.asarray(metrics_a, dtype=np.float64)
    b = np.asarray(metrics_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(
            f"metric vectors must be aligned 1-D arrays, got {a.shape} and {b.shape}"
        )
    if a.size < 2:
        raise ValidationError(f"paired test needs at least 2 pairs, got {a.size}")
    diff = a - b
    if np.allclose(diff, diff[0], rtol=0.0, atol=1e-15):
        logger.debug("Constant paired difference; t statistic undefined")
        return 1.0 if abs(diff[0]) <= 1e-15 else 0.0
    p = float(stats.ttest_rel(a, b).pvalue)
    return 1.0 if math.isnan(p) else p
