"""Bayesian sample/mean attacks, FGSM and PGD, and the accuracy harness.

Attack functions take the potential of the attacked datum (built with its
true label, so attacks are untargeted) and return perturbed inputs
``y + xi`` with ``xi`` in the attack ball.  Batched potentials are
row-aligned: row ``i`` of ``y`` is attacked with RNG stream ``i``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidInputError
from .geometry import Ball, project_to_ball
from .potentials import LossPotential
from .rng import NoiseSource, derive_seed
from .sampler import NoiseMode, advance, noise_scale, uniform_init


class AttackKind(str, Enum):
    BAYES_SAMPLE = "bayes_sample"
    BAYES_MEAN = "bayes_mean"
    FGSM = "fgsm"
    PGD = "pgd"


@dataclass(frozen=True)
class AttackConfig:
    kind: AttackKind
    ball: Ball
    gamma: float = 1000.0
    h: float = 0.1
    steps: int = 20
    seed: int = 0
    pgd_steps: int = 20
    pgd_step_size: float | None = None  # default 2.5 * radius / pgd_steps
    noise_mode: NoiseMode = NoiseMode.ALGORITHM_ONE
    zero_noise: bool = False  # test hook for the Bayesian attacks

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "noise_mode", NoiseMode(self.noise_mode))
        if self.steps < 1 or self.pgd_steps < 1:
            raise InvalidInputError("attack step counts must be >= 1")
        if not (self.h > 0 and self.gamma > 0):
            raise InvalidInputError("attack h and gamma must be positive")

    @property
    def step_size(self):
        if self.pgd_step_size is not None:
            return self.pgd_step_size
        return 2.5 * self.ball.radius / self.pgd_steps


def _rows(y):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return (y[None, :], True) if y.ndim == 1 else (y, False)


def _langevin_path(y, p, theta, cfg: AttackConfig, stream_ids, average: bool):
    y2, single = _rows(y)
    n = y2.shape[0]
    ids = np.arange(n) if stream_ids is None else np.asarray(stream_ids)
    seed = derive_seed(cfg.seed, 0xA77AC)
    xi = uniform_init(cfg.ball, seed, ids)
    xi_p = xi[0] if single else xi
    sigma = 0.0 if cfg.zero_noise else noise_scale(cfg.h, cfg.gamma, cfg.noise_mode)
    noise = None if cfg.zero_noise else NoiseSource(seed + 1, ids, cfg.ball.dim)
    acc = np.zeros_like(xi_p)
    chunk = max(1, (1 << 22) // max(1, n * cfg.ball.dim))
    done = 0
    while done < cfg.steps:
        m = min(chunk, cfg.steps - done)
        block = None if noise is None else noise.draw(m)
        for k in range(m):
            w = 0.0 if block is None else (block[k][0] if single else block[k])
            xi_p = advance(xi_p, theta, p, cfg.h, sigma, cfg.ball, w, done + k + 1)
            if average:
                acc += xi_p
        done += m
    # the average of ball points can round a ulp past the boundary
    pert = project_to_ball(acc / cfg.steps, cfg.ball) if average else xi_p
    return pert.reshape(np.shape(y))


def _add(y, xi):
    return np.asarray(y, dtype=float) + xi


def bayes_sample_perturbation(y, p, theta, cfg: AttackConfig, stream_ids=None):
    """``xi_J`` after ``cfg.steps`` projected Langevin steps from a uniform
    start."""
    return _langevin_path(y, p, theta, cfg, stream_ids, average=False)


def bayes_mean_perturbation(y, p, theta, cfg: AttackConfig, stream_ids=None):
    """``(1/J) sum_{j=1..J} xi_j``; the starting point is not averaged."""
    return _langevin_path(y, p, theta, cfg, stream_ids, average=True)


def _signed_grad(p, xi, theta):
    # np.sign maps 0 to 0, the tie-break we want
    return np.sign(p.grad_xi(xi, theta))


def fgsm_perturbation(y, p, theta, ball: Ball):
    y = np.asarray(y, dtype=float)
    return project_to_ball(ball.radius * _signed_grad(p, np.zeros_like(y), theta), ball)


def pgd_perturbation(y, p, theta, ball: Ball, steps: int, step_size: float, seed: int = 0,
                     init: str = "uniform", stream_ids=None):
    """Signed-gradient ascent with projection after every step.

    ``init="zero"`` starts from the clean input (then one step of size
    ``radius`` is FGSM).
    """
    y2, single = _rows(y)
    ids = np.arange(y2.shape[0]) if stream_ids is None else np.asarray(stream_ids)
    if init == "zero":
        xi = np.zeros_like(y2)
    elif init == "uniform":
        xi = uniform_init(ball, derive_seed(seed, 0x96D), ids)
    else:
        raise InvalidInputError(f"unknown PGD init {init!r}")
    if single:
        xi = xi[0]
    for _ in range(int(steps)):
        xi = project_to_ball(xi + step_size * _signed_grad(p, xi, theta), ball)
    return xi.reshape(np.shape(y))


def bayes_sample_attack(y, p, theta, cfg: AttackConfig, stream_ids=None):
    """Perturbed input ``y + xi_J`` (see :func:`bayes_sample_perturbation`)."""
    return _add(y, bayes_sample_perturbation(y, p, theta, cfg, stream_ids))


def bayes_mean_attack(y, p, theta, cfg: AttackConfig, stream_ids=None):
    return _add(y, bayes_mean_perturbation(y, p, theta, cfg, stream_ids))


def fgsm_attack(y, p, theta, ball: Ball):
    return _add(y, fgsm_perturbation(y, p, theta, ball))


def pgd_attack(y, p, theta, ball: Ball, steps: int, step_size: float, seed: int = 0,
               init: str = "uniform", stream_ids=None):
    return _add(y, pgd_perturbation(y, p, theta, ball, steps, step_size, seed, init, stream_ids))


def perturbation(model, theta, x, z, cfg: AttackConfig | None, stream_ids=None):
    """The perturbation ``xi`` (inside ``cfg.ball``) an attack adds to each row."""
    x = np.asarray(x, dtype=float)
    if cfg is None:
        return np.zeros_like(x)
    p = LossPotential(model, x, z)
    ids = np.arange(x.shape[0]) if stream_ids is None else stream_ids
    if cfg.kind is AttackKind.BAYES_SAMPLE:
        return bayes_sample_perturbation(x, p, theta, cfg, ids)
    if cfg.kind is AttackKind.BAYES_MEAN:
        return bayes_mean_perturbation(x, p, theta, cfg, ids)
    if cfg.kind is AttackKind.FGSM:
        return fgsm_perturbation(x, p, theta, cfg.ball)
    return pgd_perturbation(x, p, theta, cfg.ball, cfg.pgd_steps, cfg.step_size, cfg.seed, stream_ids=ids)


def perturb(model, theta, x, z, cfg: AttackConfig | None, stream_ids=None):
    """Attacked copies of a batch of inputs (white-box access to ``theta``)."""
    x = np.asarray(x, dtype=float)
    if cfg is None:
        return x
    return x + perturbation(model, theta, x, z, cfg, stream_ids)


def evaluate(model, theta, data, attack: AttackConfig | None = None, batch_size: int = 512,
             threads: int = 1) -> float:
    """Fraction of (possibly attacked) inputs classified correctly.

    Datum ``k`` always uses stream ``k``, so batching and threading do not
    change the result.
    """
    n = len(data)
    if n == 0:
        raise InvalidInputError("cannot evaluate on empty data")
    starts = list(range(0, n, batch_size))

    def job(s):
        sl = slice(s, min(s + batch_size, n))
        xa = perturb(model, theta, data.features[sl], data.labels[sl], attack, np.arange(sl.start, sl.stop))
        return int(np.sum(model.predict(theta, xa) == data.labels[sl]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            correct = sum(ex.map(job, starts))
    else:
        correct = sum(job(s) for s in starts)
    return correct / n
