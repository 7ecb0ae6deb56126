"""Small fitting helpers used by the experiment harnesses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r_squared: float


def fit_linear(xs, ys) -> LinearFit:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 2:
        raise InvalidInputError("need at least two matching points to fit")
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return LinearFit(float(slope), float(intercept), r2)


def fit_loglog(xs, ys) -> LinearFit:
    """Least-squares line through ``(log x, log y)``."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise InvalidInputError("fit_loglog needs strictly positive data")
    return fit_linear(np.log(xs), np.log(ys))


def bootstrap_ci(samples, statistic, n_resamples=1000, level=0.95, seed=0):
    """Percentile interval of ``statistic`` over row-resamples of ``samples``.

    ``samples`` has one row per independent repeat; ``statistic`` maps a
    ``(repeats, ...)`` array to a float.
    """
    samples = np.asarray(samples)
    rng = np.random.default_rng(seed)
    n = samples.shape[0]
    stats = np.empty(n_resamples)
    for b in range(n_resamples):
        stats[b] = statistic(samples[rng.integers(0, n, n)])
    alpha = (1.0 - level) / 2.0
    return float(np.quantile(stats, alpha)), float(np.quantile(stats, 1.0 - alpha))
