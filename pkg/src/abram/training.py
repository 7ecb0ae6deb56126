"""Trainers for the desk-scale classification experiments."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import evaluate
from .core import AbramConfig, run_abram, run_abram_minibatch
from .errors import DivergenceError, InvalidInputError
from .geometry import Ball, project_to_ball
from .models import MLP, Dataset
from .potentials import LossPotential
from .rng import derive_seed, stream
from .sampler import uniform_init

log = logging.getLogger(__name__)

ALGORITHMS = ("sgd", "fgsm-baseline", "abram", "minibatch")


@dataclass
class TrainConfig:
    algorithm: str = "minibatch"
    epochs: int = 5
    batch_size: int = 64  # also the particle count for Abram variants
    lr: float = 0.1
    seed: int = 0
    epsilon: float = 0.1
    norm: str = "linf"
    gamma: float = 1.0
    inner_steps: int = 10
    inner_h: float | None = None
    noise_mode: str = "algorithm1"
    fgsm_alpha: float = 1.25  # FGSM-baseline step as a multiple of epsilon

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidInputError(f"unknown training algorithm {self.algorithm!r}")
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0 or not self.epsilon > 0:
            raise InvalidInputError("epochs, batch_size, lr and epsilon must be positive")


@dataclass
class TrainResult:
    theta: np.ndarray
    epoch_accuracy: list = field(default_factory=list)


def _steps_per_epoch(n, batch):
    return max(1, n // batch)


def _sgd(model: MLP, data: Dataset, cfg: TrainConfig, theta, adversarial: bool, on_epoch):
    rng = stream(derive_seed(cfg.seed, 0x56D), 0)
    ball = Ball(cfg.epsilon, cfg.norm, model.input_dim)
    n = len(data)
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for b in range(_steps_per_epoch(n, cfg.batch_size)):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            x, z = data.features[idx], data.labels[idx]
            if adversarial:
                # random start then one signed step (FGSM with random init)
                delta = uniform_init(ball, derive_seed(cfg.seed, 0xF65, step), np.arange(len(idx)))
                g = model.grad_input(theta, x + delta, z)
                delta = project_to_ball(delta + cfg.fgsm_alpha * cfg.epsilon * np.sign(g), ball)
                x = x + delta
            theta = theta - cfg.lr * model.grad_params(theta, x, z)
            step += 1
        if not np.all(np.isfinite(theta)):
            raise DivergenceError("parameters became non-finite", step)
        on_epoch(epoch, theta)
    return theta


def train(model: MLP, data: Dataset, cfg: TrainConfig, theta0=None) -> TrainResult:
    """Train from ``theta0`` (default: seeded initialisation) and log benign
    training accuracy after each epoch."""
    theta = model.init_params(cfg.seed) if theta0 is None else np.asarray(theta0, dtype=float)
    result = TrainResult(theta)

    def on_epoch(epoch, th):
        acc = evaluate(model, th, data)
        result.epoch_accuracy.append(acc)
        log.info("epoch %d accuracy %.4f", epoch + 1, acc)

    if cfg.algorithm in ("sgd", "fgsm-baseline"):
        result.theta = _sgd(model, data, cfg, theta, cfg.algorithm == "fgsm-baseline", on_epoch)
        return result

    batch = cfg.algorithm == "minibatch"
    n = len(data)
    per_epoch = _steps_per_epoch(n, cfg.batch_size) if batch else n
    acfg = AbramConfig(
        gamma=cfg.gamma, ball=Ball(cfg.epsilon, cfg.norm, model.input_dim), h=cfg.lr,
        n_particles=cfg.batch_size, inner_steps=cfg.inner_steps, outer_steps=per_epoch * cfg.epochs,
        noise_mode=cfg.noise_mode, seed=cfg.seed, theta0=theta, inner_h=cfg.inner_h, sampling="epoch")

    def family(y, z):
        return LossPotential(model, y, z)

    def cb(j, state):
        if j % per_epoch == 0:
            on_epoch(j // per_epoch - 1, state.theta)

    runner = run_abram_minibatch if batch else run_abram
    res = runner(acfg, data, family, record_theta=False, callback=cb)
    result.theta = res.theta
    return result


def robustness_experiment(model: MLP, train_data: Dataset, test_data: Dataset, base: TrainConfig,
                          attacks: dict, algorithms=("sgd", "minibatch"), seeds=(0, 1, 2),
                          threads: int = 1) -> list:
    """Train every algorithm under every seed and evaluate on ``test_data``.

    ``attacks`` maps a row label to an :class:`AttackConfig` (``None`` for
    benign inputs).  Returns one dict per (algorithm, seed, attack).
    """
    rows = []
    for alg in algorithms:
        for seed in seeds:
            cfg = replace(base, algorithm=alg, seed=int(seed))
            theta = train(model, train_data, cfg).theta
            for name, attack in attacks.items():
                if attack is not None:
                    attack = replace(attack, seed=int(seed))
                acc = evaluate(model, theta, test_data, attack, threads=threads)
                rows.append({"algorithm": alg, "seed": int(seed), "attack": name, "accuracy": acc})
    return rows


def summarise(rows) -> dict:
    """Mean accuracy per ``(algorithm, attack)`` over seeds."""
    acc = {}
    for r in rows:
        acc.setdefault((r["algorithm"], r["attack"]), []).append(r["accuracy"])
    return {k: float(np.mean(v)) for k, v in acc.items()}
