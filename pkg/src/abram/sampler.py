"""Projected Euler-Maruyama for reflected Langevin dynamics at frozen theta.

One step is ``xi <- Proj(xi + h grad_xi Phi(xi, theta) + sigma w)`` with
``w ~ N(0, I)``.  Two noise scalings are offered:

``NoiseMode.ALGORITHM_ONE``
    ``sigma = sqrt(2h) / gamma``, the training-algorithm convention.  The
    drift/noise ratio makes ``exp(gamma**2 Phi)`` the stationary law.
``NoiseMode.CONTINUOUS``
    ``sigma = sqrt(2h / gamma)``, a time-rescaled Euler step of
    ``d xi = gamma grad Phi dt + sqrt(2) dW``; stationary law ``exp(gamma Phi)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DivergenceError, InvalidInputError
from .geometry import Ball, NormKind, project_to_ball, sample_uniform
from .oracle import AdversarialDensity, _bin_masses, cube_root_bins
from .potentials import Potential
from .rng import NoiseSource, stream

_CHUNK_FLOATS = 1 << 22


class NoiseMode(str, Enum):
    """``algorithm1``: noise ``sqrt(2h)/gamma``, stationary law ``exp(gamma^2 Phi)``.
    ``continuous``: noise ``sqrt(2h/gamma)``, stationary law ``exp(gamma Phi)``."""

    ALGORITHM_ONE = "algorithm1"
    CONTINUOUS = "continuous"


def noise_scale(h: float, gamma: float, mode: NoiseMode) -> float:
    mode = NoiseMode(mode)
    if mode is NoiseMode.ALGORITHM_ONE:
        return np.sqrt(2.0 * h) / gamma
    return np.sqrt(2.0 * h / gamma)


def effective_gamma(gamma: float, mode: NoiseMode) -> float:
    """Inverse temperature of the chain's stationary law."""
    return gamma**2 if NoiseMode(mode) is NoiseMode.ALGORITHM_ONE else gamma


@dataclass(frozen=True)
class LangevinConfig:
    h: float
    gamma: float
    ball: Ball
    steps: int = 1
    noise_mode: NoiseMode = NoiseMode.ALGORITHM_ONE
    seed: int = 0
    zero_noise: bool = False  # test hook: drop the Gaussian term

    def __post_init__(self):
        object.__setattr__(self, "noise_mode", NoiseMode(self.noise_mode))
        if not self.h > 0:
            raise InvalidInputError(f"step size must be positive, got {self.h}")
        if not self.gamma > 0:
            raise InvalidInputError(f"gamma must be positive, got {self.gamma}")
        if int(self.steps) < 0:
            raise InvalidInputError("steps must be >= 0")

    @property
    def sigma(self) -> float:
        return 0.0 if self.zero_noise else noise_scale(self.h, self.gamma, self.noise_mode)


def advance(xi, theta, p: Potential, h, sigma, ball, w, step=None):
    """Deterministic core of a step given the Gaussian increment ``w``."""
    g = p.grad_xi(xi, theta)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient in Langevin step", step)
    return project_to_ball(xi + h * g + sigma * w, ball)


def langevin_step(xi, theta, p: Potential, cfg: LangevinConfig, rng=None, step=None):
    xi = np.asarray(xi, dtype=float)
    if cfg.zero_noise:
        w = np.zeros_like(xi)
    else:
        rng = stream(cfg.seed, 0) if rng is None else rng
        w = rng.standard_normal(xi.shape)
    return advance(xi, theta, p, cfg.h, cfg.sigma, cfg.ball, w, step)


def run_chain(xi0, theta, p: Potential, cfg: LangevinConfig, rng=None) -> np.ndarray:
    """Trajectory of ``cfg.steps`` steps from ``xi0``; shape ``(steps + 1, d)``."""
    rng = stream(cfg.seed, 0) if rng is None else rng
    xi = np.asarray(xi0, dtype=float).reshape(cfg.ball.dim)
    traj = np.empty((cfg.steps + 1, cfg.ball.dim))
    traj[0] = xi
    for t in range(cfg.steps):
        xi = langevin_step(xi, theta, p, cfg, rng, step=t + 1)
        traj[t + 1] = xi
    return traj


def _chunks(total, per_step):
    size = max(1, _CHUNK_FLOATS // max(1, per_step))
    start = 0
    while start < total:
        n = min(size, total - start)
        yield start, n
        start += n


def run_chains(xi0, theta, p: Potential, cfg: LangevinConfig, stream_ids=None, callback=None):
    """Advance many independent chains in lockstep.

    Chain ``i`` uses stream ``stream_ids[i]`` of ``cfg.seed``, so its path does
    not depend on how many other chains run.  ``callback(t, xi)`` is invoked
    after every step ``t = 1..steps``.  Returns the final states.
    """
    xi = np.array(xi0, dtype=float, copy=True)
    n = xi.shape[0]
    ids = np.arange(n) if stream_ids is None else np.asarray(stream_ids)
    noise = None if cfg.zero_noise else NoiseSource(cfg.seed, ids, cfg.ball.dim)
    sigma = cfg.sigma
    for start, m in _chunks(cfg.steps, n * cfg.ball.dim):
        block = np.zeros((m, n, cfg.ball.dim)) if noise is None else noise.draw(m)
        for k in range(m):
            t = start + k + 1
            xi = advance(xi, theta, p, cfg.h, sigma, cfg.ball, block[k], t)
            if callback is not None:
                callback(t, xi)
    return xi


def uniform_init(ball: Ball, seed: int, stream_ids) -> np.ndarray:
    """One uniform ball point per stream (drawn from a stream family distinct
    from the noise streams)."""
    return np.stack([sample_uniform(ball, stream(seed ^ 0x5DEECE66D, s)) for s in stream_ids])


def ergodicity_diagnostic(theta, p: Potential, cfg: LangevinConfig, n_chains: int,
                          burn_in: int | None = None, n_checkpoints: int = 10,
                          init: str | float = "uniform", grid: int | None = None):
    """Distance to equilibrium of ``n_chains`` independent frozen-theta chains.

    At ``n_checkpoints`` evenly spaced steps the cross-chain histogram is
    compared in total variation with the quadrature density at the chain's
    effective inverse temperature.  States after ``burn_in`` (default: half
    the run) are also pooled into one histogram.  ``init`` is ``"uniform"`` or
    a fixed starting point.
    """
    if cfg.ball.dim != 1:
        raise InvalidInputError("ergodicity_diagnostic needs a 1-D potential")
    burn_in = cfg.steps // 2 if burn_in is None else int(burn_in)
    target = AdversarialDensity(p, effective_gamma(cfg.gamma, cfg.noise_mode), cfg.ball,
                                np.atleast_1d(theta), grid)
    ids = np.arange(n_chains)
    if isinstance(init, str):
        xi0 = uniform_init(cfg.ball, cfg.seed, ids)
    else:
        xi0 = np.full((n_chains, 1), float(init))
    eps = cfg.ball.radius
    cross_edges = np.linspace(-eps, eps, cube_root_bins(n_chains) + 1)
    pooled_n = n_chains * max(cfg.steps - burn_in, 0)
    pooled_edges = np.linspace(-eps, eps, cube_root_bins(max(pooled_n, 1)) + 1)
    pooled = np.zeros(len(pooled_edges) - 1)
    target_cross = _bin_masses(target, cross_edges)
    checkpoints = sorted({max(1, round(cfg.steps * (k + 1) / n_checkpoints)) for k in range(n_checkpoints)})
    curve = []

    def tv(x, edges, ref):
        counts, _ = np.histogram(x[:, 0], bins=edges)
        return 0.5 * float(np.sum(np.abs(counts / len(x) - ref)))

    def cb(t, xi):
        if t > burn_in:
            counts, _ = np.histogram(xi[:, 0], bins=pooled_edges)
            pooled[:] += counts
        if t in checkpoints:
            curve.append(tv(xi, cross_edges, target_cross))

    run_chains(xi0, theta, p, cfg, ids, callback=cb)
    pooled_tv = None
    if pooled_n > 0:
        ref = _bin_masses(target, pooled_edges)
        pooled_tv = 0.5 * float(np.sum(np.abs(pooled / pooled_n - ref)))
    return {
        "checkpoints": checkpoints,
        "tv_curve": curve,
        "initial_tv": tv(xi0, cross_edges, target_cross),
        "final_tv": curve[-1] if curve else tv(xi0, cross_edges, target_cross),
        "pooled_tv": pooled_tv,
        "pooled_samples": pooled_n,
    }
