"""Acceptance criteria, one test each.

Every test records a one-line verdict that the session summary prints as
``PASS``/``FAIL``; run ``pytest tests/test_acceptance.py -v`` to see them.
"""
import os
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from abram.attacks import AttackConfig, bayes_mean_perturbation, perturbation
from abram.cli import run
from abram.core import AbramConfig, chaos_experiment, constant_family, empirical_covariance, g_estimate
from abram.core import longtime_experiment, run_abram
from abram.geometry import Ball
from abram.models import load_mnist_subset, make_prototypes, mlp
from abram.oracle import F, AdversarialDensity, EmpiricalMeasure, grad_F, mean
from abram.potentials import (coupled_quadratic_1d, linear_quadratic, mollified_quadratic, shifted_quadratic_1d,
                              zero_potential)
from abram.rng import stream
from abram.sampler import LangevinConfig, ergodicity_diagnostic
from abram.training import TrainConfig, robustness_experiment, summarise, train


class _One:
    features = np.zeros((1, 1))
    labels = np.zeros(1, dtype=np.int64)


def _verdict(record, name, detail):
    record("criterion", name)
    record("detail", detail)


def _csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1)


def test_oracle_soundness(record_property):
    t0 = time.perf_counter()
    potentials = {"shifted": shifted_quadratic_1d(0.1), "coupled": coupled_quadratic_1d(),
                  "zero": zero_potential(), "linear_quadratic": linear_quadratic(1),
                  "mollified": mollified_quadratic(1, 0.3)}
    worst_mass = worst_grad = 0.0
    for p in potentials.values():
        for gamma in (0.0, 0.1, 1.0, 10.0, 1000.0):
            for eps in (0.025, 0.1, 0.4, 1.0):
                for theta in (-0.7, 0.3):
                    d = AdversarialDensity(p, gamma, Ball(eps), [theta])
                    # adaptive Gauss-Kronrod against the density's own normaliser
                    mass, _ = integrate.quad(lambda x: float(np.ravel(d(x))[0]), -eps, eps,
                                             epsabs=1e-14, epsrel=1e-13, limit=1000)
                    worst_mass = max(worst_mass, abs(mass - 1), abs(d.integral() - 1))
                    h = 1e-5
                    fd = (F([theta + h], d) - F([theta - h], d)) / (2 * h)
                    worst_grad = max(worst_grad, abs(grad_F([theta], d)[0] - fd) / max(1.0, abs(fd)))
    elapsed = time.perf_counter() - t0
    _verdict(record_property, "1 oracle soundness",
             f"max |mass-1|={worst_mass:.1e} max grad rel err={worst_grad:.1e} in {elapsed:.1f}s")
    assert worst_mass < 1e-8 and worst_grad < 1e-6 and elapsed < 10


def test_density_profiles(tmp_path, record_property):
    t0 = time.perf_counter()
    out = tmp_path / "density.csv"
    assert run(["density", "--out", str(out)]) == 0
    t = _csv(out)

    def block(g, e):
        b = t[(t[:, 0] == g) & (t[:, 1] == e)]
        return b[:, 2], b[:, 3]

    _, flat = block(0.1, 0.025)
    ratio = flat.max() / flat.min()
    masses = {}
    for e in (0.025, 0.1, 0.4):
        xs, v = block(1000.0, e)
        mode = xs[np.argmax(v)]
        near = np.abs(xs - mode) <= 0.02 * 2 * e
        masses[e] = integrate.trapezoid(np.where(near, v, 0.0), xs)
    elapsed = time.perf_counter() - t0
    shown = " ".join(f"eps={e}:{m:.3f}" for e, m in masses.items())
    _verdict(record_property, "2 density profiles",
             f"flat max/min={ratio:.4f}; mass near mode at gamma=1000 {shown} (asserted at eps=0.4) in {elapsed:.1f}s")
    # the boundary layer is 1/(gamma |Phi'|) wide whatever eps is; only eps=0.4 spans 40 widths
    assert ratio < 1.1 and masses[0.4] >= 0.99 and elapsed < 10


def _path_cfg(n, seed):
    return AbramConfig(gamma=10.0, ball=Ball(1.0), h=0.01, n_particles=n, inner_steps=10, outer_steps=1000,
                       noise_mode="continuous", seed=seed, theta0=[1.0])


def test_parameter_paths(record_property):
    t0 = time.perf_counter()
    fam = constant_family(coupled_quadratic_1d())
    finals, tail_var = [], {3: [], 50: []}
    for seed in range(20):
        for n in (3, 50):
            path = run_abram(_path_cfg(n, seed), _One(), fam).theta_path[:, 0]
            tail_var[n].append(path[750:].var())
            if n == 50:
                finals.append(abs(path[-1]))
    v3, v50 = np.mean(tail_var[3]), np.mean(tail_var[50])
    elapsed = time.perf_counter() - t0
    _verdict(record_property, "3 parameter paths",
             f"max |theta_J| (N=50, 20 seeds)={max(finals):.4f}; tail var N=3 {v3:.2e} vs N=50 {v50:.2e} "
             f"in {elapsed:.1f}s")
    assert max(finals) < 0.05 and v3 > v50 and elapsed < 60


def test_estimator_equivalence(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(100):
        rng = stream(k, 0)
        n, d = rng.integers(2, 30), rng.integers(1, 6)
        a, b = rng.normal(size=n), rng.normal(size=(n, d))
        brute = np.zeros(d)
        for i in range(n):
            for j in range(n):
                brute += (a[i] * b[i] - a[i] * b[j]) / n**2
        worst = max(worst, np.max(np.abs(empirical_covariance(a, b) - brute)))
    g = g_estimate([1.0], EmpiricalMeasure([-0.5, 0.5]), linear_quadratic(1))[0]
    elapsed = time.perf_counter() - t0
    _verdict(record_property, "4 estimator equivalence",
             f"max |cov - double loop|={worst:.1e}; g_estimate={g:.15f} in {elapsed:.2f}s")
    assert worst < 1e-12 and abs(g - 3.0) < 1e-12 and elapsed < 1


def test_chaos_rate(record_property):
    t0 = time.perf_counter()
    cfg = AbramConfig(gamma=30.0, ball=Ball(1.0), h=0.01, n_particles=4096, inner_steps=10, outer_steps=100,
                      noise_mode="continuous", seed=0, theta0=[1.0])
    res = chaos_experiment(cfg, coupled_quadratic_1d(), [4, 8, 16, 32, 64, 128, 256], 4096, 200,
                           threads=4, bootstrap=1000)
    elapsed = time.perf_counter() - t0
    _verdict(record_property, "5 chaos rate",
             f"slope={res.slope:.3f} ci95=[{res.slope_ci[0]:.3f}, {res.slope_ci[1]:.3f}] r2={res.r_squared:.3f} "
             f"repeats=200 in {elapsed:.0f}s")
    assert -0.65 <= res.slope <= -0.35 and elapsed < 900


def test_long_time_decay(record_property):
    t0 = time.perf_counter()
    cfg = AbramConfig(gamma=1.0, ball=Ball(1.0), h=0.05, n_particles=2000, inner_steps=10, outer_steps=200,
                      noise_mode="continuous", seed=0, theta0=[1.0])
    res = longtime_experiment(cfg, coupled_quadratic_1d(), seeds=4, bootstrap=1000)
    elapsed = time.perf_counter() - t0
    _verdict(record_property, "6 long-time decay",
             f"eta={res.eta:.3f} ci95=[{res.eta_ci[0]:.3f}, {res.eta_ci[1]:.3f}] r2={res.r_squared:.4f} "
             f"segment={res.segment} in {elapsed:.1f}s")
    assert res.r_squared >= 0.95 and res.eta > 0 and elapsed < 300


def test_stationarity(record_property):
    t0 = time.perf_counter()
    steps = 20_000
    cfg = LangevinConfig(h=2.5e-4, gamma=10.0, ball=Ball(0.4), steps=steps, seed=0, noise_mode="continuous")
    out = ergodicity_diagnostic([0.0], shifted_quadratic_1d(0.1), cfg, n_chains=4000, burn_in=steps - 250,
                                init=0.1, n_checkpoints=4)
    curve = out["tv_curve"]
    elapsed = time.perf_counter() - t0
    _verdict(record_property, "7 stationarity",
             f"pooled TV={out['pooled_tv']:.4f} over {out['pooled_samples']} samples; "
             f"TV at T/4={curve[0]:.4f}, at T={curve[-1]:.4f} in {elapsed:.1f}s")
    assert out["pooled_samples"] >= 10**6
    assert out["pooled_tv"] < 0.05 and curve[-1] < curve[0] and elapsed < 120


def _learning_data():
    mnist = os.environ.get("ABRAM_MNIST_DIR")
    if mnist:
        return load_mnist_subset(mnist, "train", 2000), load_mnist_subset(mnist, "test", 1000)
    return make_prototypes(2000, seed=1), make_prototypes(1000, seed=2)


def test_learning_robustness(record_property):
    t0 = time.perf_counter()
    train_data, test_data = _learning_data()
    base = TrainConfig(epochs=10, batch_size=64, lr=0.1, epsilon=0.2, gamma=1.0, inner_h=2.0)
    attacks = {"none": None, "pgd": AttackConfig("pgd", Ball(0.2, "linf", 784)),
               "bayes_sample": AttackConfig("bayes_sample", Ball(0.2, "linf", 784))}
    rows = robustness_experiment(mlp([784, 64, 3]), train_data, test_data, base, attacks)
    acc = summarise(rows)
    gap = acc[("minibatch", "pgd")] - acc[("sgd", "pgd")]
    drift = abs(acc[("minibatch", "bayes_sample")] - acc[("minibatch", "none")])
    elapsed = time.perf_counter() - t0
    _verdict(record_property, "8 learning robustness",
             f"[{train_data.name}] PGD acc minibatch {acc[('minibatch', 'pgd')]:.3f} vs sgd "
             f"{acc[('sgd', 'pgd')]:.3f} (gap {100 * gap:+.1f} pts); bayes_sample vs benign "
             f"{acc[('minibatch', 'bayes_sample')]:.3f}/{acc[('minibatch', 'none')]:.3f} in {elapsed:.0f}s")
    assert gap >= 0.05 and drift <= 0.02 and elapsed < 600


def test_attack_contracts(record_property):
    t0 = time.perf_counter()
    data = make_prototypes(200, seed=2)
    model = mlp([784, 16, 3])
    theta = train(model, make_prototypes(300, seed=1), TrainConfig(algorithm="sgd", epochs=3)).theta
    outside = 0
    for kind in ("bayes_sample", "bayes_mean", "fgsm", "pgd"):
        for norm, radius in (("linf", 0.2), ("l2", 3.0)):
            ball = Ball(radius, norm, 784)
            xi = perturbation(model, theta, data.features, data.labels, AttackConfig(kind, ball, gamma=1000.0))
            outside += int(np.sum(ball.norm(xi) > radius))
    ball = Ball(0.1)
    p = shifted_quadratic_1d(0.1)
    target = mean(AdversarialDensity(p, 1000.0, ball))[0]
    got = bayes_mean_perturbation(np.zeros(1), p, [0.0], AttackConfig("bayes_mean", ball, gamma=1000.0,
                                                                       steps=10_000))[0]
    elapsed = time.perf_counter() - t0
    _verdict(record_property, "9 attack contracts",
             f"{outside} perturbations outside their ball; mean attack {got:.4f} vs oracle {target:.4f} "
             f"in {elapsed:.1f}s")
    assert outside == 0 and abs(got - target) < 0.05 and elapsed < 60


def test_cli_determinism(tmp_path, record_property):
    ck = tmp_path / "m.ckpt"
    commands = {
        "density": ["density", "--gammas", "0.1,1000", "--eps", "0.1,0.4"],
        "paths": ["paths", "--steps", "100", "--n", "10"],
        "chaos": ["chaos", "--n-list", "4,8,16", "--n-ref", "64", "--repeats", "8", "--steps", "20",
                  "--bootstrap", "100"],
        "longtime": ["longtime", "--n", "200", "--steps", "40", "--seeds", "3", "--bootstrap", "100"],
        "train": ["train", "--n-samples", "200", "--epochs", "2", "--arch", "784,8,3"],
        "attack": ["attack", "--checkpoint", str(ck), "--attack", "bayes_mean", "--n-samples", "50"],
        "eval": ["eval", "--checkpoint", str(ck), "--n-samples", "50"],
    }
    differing = []
    for name, args in commands.items():
        blobs = []
        for k, threads in enumerate(("1", "1", "3")):
            out = tmp_path / f"{name}{k}.{'ckpt' if name == 'train' else 'csv'}"
            assert run(args + ["--seed", "17", "--threads", threads, "--out", str(out)]) == 0
            files = sorted(p for p in tmp_path.iterdir() if p.name.startswith(f"{name}{k}"))
            blobs.append([p.read_bytes() for p in files])
        if not blobs[0] == blobs[1] == blobs[2]:
            differing.append(name)
        if name == "train":
            (tmp_path / "train0.ckpt").replace(ck)
    _verdict(record_property, "10 determinism",
             f"{len(commands) - len(differing)}/{len(commands)} commands bit-identical across reruns and threads"
             + (f"; differing: {', '.join(differing)}" if differing else ""))
    assert not differing
