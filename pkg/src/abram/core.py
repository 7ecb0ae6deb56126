"""Abram: N reflected Langevin particles coupled to a gradient-descent parameter.

Each outer step freezes ``theta``, advances every particle ``inner_steps``
times with the projected Euler-Maruyama step, and then moves ``theta`` along

    -h * [ mean_i grad_theta Phi_i + gamma * Cov_N(Phi, grad_theta Phi) ].

Particle ``i`` always draws from RNG stream ``i``; the first ``N`` particles of
a larger system therefore see exactly the same Brownian increments, which is
the coupling used by :func:`chaos_experiment`.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DivergenceError, InvalidInputError, PreconditionError
from .geometry import Ball
from .oracle import AdversarialDensity, EmpiricalMeasure, F, _w2sq_empirical
from .potentials import Potential
from .rng import NoiseSource, derive_seed, stream
from .sampler import NoiseMode, advance, effective_gamma, noise_scale, uniform_init
from .stats import bootstrap_ci, fit_linear, fit_loglog

log = logging.getLogger(__name__)

# stream-family tags, mixed into the user seed
_TAG_PARTICLES = 1
_TAG_DATA = 2
_TAG_MODEL = 3


@dataclass(frozen=True)
class AbramConfig:
    gamma: float
    ball: Ball
    h: float
    n_particles: int
    inner_steps: int = 10
    outer_steps: int = 100
    noise_mode: NoiseMode = NoiseMode.ALGORITHM_ONE
    seed: int = 0
    theta0: np.ndarray = field(default_factory=lambda: np.zeros(1))
    inner_h: float | None = None  # particle step; defaults to h
    sampling: str = "replacement"  # or "epoch"
    zero_noise: bool = False  # test hook

    def __post_init__(self):
        object.__setattr__(self, "noise_mode", NoiseMode(self.noise_mode))
        object.__setattr__(self, "theta0", np.atleast_1d(np.asarray(self.theta0, dtype=float)))
        if self.n_particles < 1 or self.inner_steps < 1 or self.outer_steps < 1:
            raise InvalidInputError("n_particles, inner_steps and outer_steps must all be >= 1")
        if not (self.h > 0 and self.gamma > 0):
            raise InvalidInputError("h and gamma must be positive")
        if self.inner_h is not None and not self.inner_h > 0:
            raise InvalidInputError("inner_h must be positive")
        if self.sampling not in ("replacement", "epoch"):
            raise InvalidInputError(f"unknown sampling mode {self.sampling!r}")
        if not np.all(np.isfinite(self.theta0)):
            raise InvalidInputError("theta0 must be finite")

    @property
    def particle_h(self) -> float:
        return self.h if self.inner_h is None else self.inner_h

    @property
    def sigma(self) -> float:
        return 0.0 if self.zero_noise else noise_scale(self.particle_h, self.gamma, self.noise_mode)


@dataclass
class ParticleEnsemble:
    points: np.ndarray
    stream_ids: np.ndarray
    noise: NoiseSource | None = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return self.points.shape[0]

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.points)


@dataclass
class AbramState:
    theta: np.ndarray
    ensemble: ParticleEnsemble
    iteration: int = 0


def init_state(cfg: AbramConfig, n: int | None = None) -> AbramState:
    """Uniform particles in the ball, one noise stream per particle."""
    n = cfg.n_particles if n is None else n
    ids = np.arange(n)
    seed = derive_seed(cfg.seed, _TAG_PARTICLES)
    points = uniform_init(cfg.ball, seed, ids)
    noise = None if cfg.zero_noise else NoiseSource(seed, ids, cfg.ball.dim)
    return AbramState(cfg.theta0.copy(), ParticleEnsemble(points, ids, noise), 0)


# estimators -----------------------------------------------------------------

def empirical_covariance(vals, grads) -> np.ndarray:
    """``(1/N) sum Phi_i g_i - (1/N^2) (sum Phi_i)(sum g_i)``."""
    vals = np.asarray(vals, dtype=float).reshape(-1)
    grads = np.asarray(grads, dtype=float)
    if grads.ndim == 1:
        grads = grads[:, None]
    if grads.shape[0] != vals.shape[0]:
        raise InvalidInputError(f"{vals.shape[0]} values but {grads.shape[0]} gradients")
    if vals.size == 0:
        raise InvalidInputError("empty sample")
    n = vals.size
    return vals @ grads / n - vals.sum() * grads.sum(axis=0) / n**2


def g_estimate(theta, measure, p: Potential, cov_weight: float = 1.0) -> np.ndarray:
    """``nu(grad_theta Phi) + cov_weight * Cov_nu(Phi, grad_theta Phi)`` for an
    empirical ``nu``.  ``cov_weight=1`` is the drift ``G``; ``cov_weight=gamma``
    estimates the gradient of the relaxed objective."""
    pts = measure.points if isinstance(measure, EmpiricalMeasure) else np.asarray(measure, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise InvalidInputError("empty measure")
    vals = np.asarray(p.value(pts, theta), dtype=float)
    grads = np.asarray(p.grad_theta(pts, theta), dtype=float)
    return grads.mean(axis=0) + cov_weight * empirical_covariance(vals, grads)


def _theta_direction(xi, theta, p: Potential, gamma: float) -> np.ndarray:
    """``mean grad + gamma Cov`` as one weighted gradient: the covariance equals
    ``sum_i (Phi_i - mean Phi) / N * grad_i``."""
    vals = np.asarray(p.value(xi, theta), dtype=float)
    n = vals.size
    weights = (1.0 + gamma * (vals - vals.mean())) / n
    return p.weighted_grad_theta(xi, theta, weights)


# dynamics -------------------------------------------------------------------

def _inner(xi, theta, p, cfg: AbramConfig, w_block, j):
    h, sigma, ball = cfg.particle_h, cfg.sigma, cfg.ball
    for tau in range(cfg.inner_steps):
        w = 0.0 if w_block is None else w_block[tau]
        xi = advance(xi, theta, p, h, sigma, ball, w, step=(j, tau + 1))
    return xi


def theta_update(xi, theta, p: Potential, h: float, gamma: float) -> np.ndarray:
    """``theta - h * (mean_i grad_theta Phi_i + gamma * Cov_N)`` at fixed
    particles ``xi``; ``gamma = 0`` is allowed here."""
    return np.asarray(theta, dtype=float) - h * _theta_direction(np.asarray(xi, dtype=float), theta, p, gamma)


def _update(xi, theta, p, cfg: AbramConfig, j):
    new = theta_update(xi, theta, p, cfg.h, cfg.gamma)
    if not np.all(np.isfinite(new)):
        raise DivergenceError("theta became non-finite", step=j)
    return new


def abram_outer_step(state: AbramState, potential: Potential, cfg: AbramConfig) -> AbramState:
    """One outer iteration: ``inner_steps`` particle moves at frozen theta, then
    one parameter step.  Particles persist into the next iteration."""
    ens = state.ensemble
    j = state.iteration + 1
    w = None if ens.noise is None else ens.noise.draw(cfg.inner_steps)
    xi = _inner(ens.points, state.theta, potential, cfg, w, j)
    theta = _update(xi, state.theta, potential, cfg, j)
    return AbramState(theta, ParticleEnsemble(xi, ens.stream_ids, ens.noise), j)


@dataclass
class AbramResult:
    theta: np.ndarray
    theta_path: np.ndarray | None
    particle_mean: np.ndarray
    particle_var: np.ndarray
    particle_path: np.ndarray | None
    state: AbramState


def constant_family(p: Potential) -> Callable:
    """Potential family that ignores the datum (toy problems with K = 1)."""
    return lambda y, z: p


class _IndexSampler:
    def __init__(self, k, seed, mode):
        self.k, self.mode = k, mode
        self.rng = stream(derive_seed(seed, _TAG_DATA), 0)
        self._perm = np.empty(0, dtype=np.int64)

    def take(self, n):
        if self.mode == "replacement":
            return self.rng.integers(0, self.k, size=n)
        out = []
        while n > 0:
            if self._perm.size == 0:
                self._perm = self.rng.permutation(self.k)
            take = min(n, self._perm.size)
            out.append(self._perm[:take])
            self._perm = self._perm[take:]
            n -= take
        return np.concatenate(out)


def _run(cfg, data, family, batch, record_theta, record_particles, index_sequence, callback):
    features, labels = np.asarray(data.features), np.asarray(data.labels)
    k = features.shape[0]
    if k == 0:
        raise InvalidInputError("dataset is empty")
    state = init_state(cfg)
    sampler = _IndexSampler(k, cfg.seed, cfg.sampling)
    n, J = cfg.n_particles, cfg.outer_steps
    thetas = np.empty((J + 1, cfg.theta0.size)) if record_theta else None
    pmean = np.empty((J + 1, cfg.ball.dim))
    pvar = np.empty((J + 1, cfg.ball.dim))
    ppath = np.empty((J + 1, n, cfg.ball.dim)) if record_particles else None

    def record(j, st):
        if thetas is not None:
            thetas[j] = st.theta
        pmean[j] = st.ensemble.points.mean(axis=0)
        pvar[j] = st.ensemble.points.var(axis=0)
        if ppath is not None:
            ppath[j] = st.ensemble.points

    record(0, state)
    for j in range(1, J + 1):
        size = n if batch else 1
        if index_sequence is not None:
            idx = np.asarray(index_sequence[j - 1]).reshape(size)
        else:
            idx = sampler.take(size)
        if batch:
            pot = family(features[idx], labels[idx])
        else:
            pot = family(features[idx[0]], labels[idx[0]])
        state = abram_outer_step(state, pot, cfg)
        record(j, state)
        if callback is not None:
            callback(j, state)
    return AbramResult(state.theta, thetas, pmean, pvar, ppath, state)


def run_abram(cfg: AbramConfig, data, family: Callable, record_theta=True,
              record_particles=False, index_sequence=None, callback=None) -> AbramResult:
    """Single-datum Abram: one training pair drawn per outer step, shared by
    all particles.

    ``family(y, z)`` builds the potential for a datum.  ``index_sequence``
    overrides the random datum choice (entry ``j-1`` is used at step ``j``).
    """
    return _run(cfg, data, family, False, record_theta, record_particles, index_sequence, callback)


def run_abram_minibatch(cfg: AbramConfig, data, family: Callable, record_theta=True,
                        record_particles=False, index_sequence=None, callback=None) -> AbramResult:
    """Mini-batching Abram: ``N`` data per outer step, particle ``i`` attacks
    datum ``i`` and a single covariance is taken across the batch.

    ``family`` receives the stacked batch ``(features[idx], labels[idx])`` and
    must return a row-aligned potential.
    """
    return _run(cfg, data, family, True, record_theta, record_particles, index_sequence, callback)


# experiment harnesses -------------------------------------------------------

def simulate(theta0, xi0, noise, potential: Potential, cfg: AbramConfig):
    """Run ``cfg.outer_steps`` iterations with a pre-drawn noise array of shape
    ``(outer_steps * inner_steps, N, d)``; returns final ``(theta, xi)``."""
    theta = np.array(theta0, dtype=float)
    xi = np.array(xi0, dtype=float)
    T = cfg.inner_steps
    for j in range(1, cfg.outer_steps + 1):
        w = None if noise is None else noise[(j - 1) * T: j * T]
        xi = _inner(xi, theta, potential, cfg, w, j)
        theta = _update(xi, theta, potential, cfg, j)
    return theta, xi


@dataclass
class ChaosResult:
    n_list: list
    n_ref: int
    theta_gap: np.ndarray  # (repeats, len(n_list))
    w2_sq: np.ndarray  # (repeats, len(n_list))
    slope: float
    intercept: float
    r_squared: float
    slope_ci: tuple | None = None

    @property
    def total(self):
        return self.theta_gap + self.w2_sq

    def table(self):
        rows = []
        for k, n in enumerate(self.n_list):
            rows.append({
                "N": n,
                "theta_gap": float(self.theta_gap[:, k].mean()),
                "w2_sq": float(self.w2_sq[:, k].mean()),
                "total": float(self.total[:, k].mean()),
            })
        return rows


def _chaos_repeat(r, cfg, n_list, n_ref, potential):
    seed = derive_seed(cfg.seed, _TAG_PARTICLES, r)
    ids = np.arange(n_ref)
    xi0 = uniform_init(cfg.ball, seed, ids)
    steps = cfg.outer_steps * cfg.inner_steps
    noise = None if cfg.zero_noise else NoiseSource(seed, ids, cfg.ball.dim).draw(steps)
    th_ref, xi_ref = simulate(cfg.theta0, xi0, noise, potential, cfg)
    gaps, w2s = [], []
    for n in n_list:
        if n == n_ref:
            th, xi = th_ref, xi_ref
        else:
            th, xi = simulate(cfg.theta0, xi0[:n], None if noise is None else noise[:, :n], potential, cfg)
        gaps.append(float(np.sum((th - th_ref) ** 2)))
        w2s.append(_w2sq_empirical(xi[:, 0], xi_ref[:, 0]))
    return gaps, w2s


def chaos_experiment(cfg: AbramConfig, potential: Potential, n_list, n_ref: int, repeats: int,
                     threads: int = 1, bootstrap: int = 0) -> ChaosResult:
    """Propagation-of-chaos rate at desk scale.

    For every repeat a reference system of ``n_ref`` particles is simulated;
    each smaller system reuses the reference's first ``N`` initial points and
    Brownian streams.  The squared parameter gap and ``W2^2`` between the
    particle measures at the final time are averaged over repeats and a
    log-log slope is fitted against ``N``.
    """
    n_list = [int(n) for n in n_list]
    if cfg.ball.dim != 1:
        raise PreconditionError("chaos_experiment is implemented for 1-D particles")
    if n_ref < max(n_list):
        raise PreconditionError("n_ref must be at least max(n_list)")

    def job(r):
        return _chaos_repeat(r, cfg, n_list, n_ref, potential)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(job, range(repeats)))
    else:
        results = [job(r) for r in range(repeats)]
    gaps = np.array([g for g, _ in results])
    w2 = np.array([w for _, w in results])
    total = gaps + w2
    # N == n_ref is the coupling sanity point (gap exactly 0): not fitted
    keep = np.array([n < n_ref for n in n_list])
    xs = np.asarray(n_list)[keep]
    fit = fit_loglog(xs, total[:, keep].mean(axis=0))
    ci = None
    if bootstrap:
        ci = bootstrap_ci(total[:, keep], lambda s: fit_loglog(xs, s.mean(axis=0)).slope,
                          n_resamples=bootstrap, seed=cfg.seed)
    return ChaosResult(n_list, n_ref, gaps, w2, fit.slope, fit.intercept, fit.r_squared, ci)


@dataclass
class MinimiserCertificate:
    theta: float
    value: float
    flat: bool


def minimiser_certificate(p: Potential, density: AdversarialDensity, grid=(-1.0, 1.0, 201),
                          tol: float = 1e-10) -> MinimiserCertificate:
    """Grid search of the relaxed objective over scalar theta, refined by
    golden-section search around the best grid point."""
    if p.theta_dim != 1:
        raise PreconditionError("minimiser_certificate needs scalar theta")
    lo, hi, n = grid
    ts = np.linspace(lo, hi, int(n))
    fs = np.array([F([t], density) for t in ts])
    if np.ptp(fs) <= 1e-12 * max(1.0, np.max(np.abs(fs))):
        return MinimiserCertificate(float(lo), float(fs[0]), True)
    k = int(np.argmin(fs))
    if k in (0, len(ts) - 1):
        return MinimiserCertificate(float(ts[k]), float(fs[k]), False)
    res = minimize_scalar(lambda t: F([t], density), bracket=(ts[k - 1], ts[k], ts[k + 1]),
                          method="golden", tol=tol)
    if res.fun <= fs[k]:
        return MinimiserCertificate(float(res.x), float(res.fun), False)
    return MinimiserCertificate(float(ts[k]), float(fs[k]), False)


@dataclass
class LongtimeResult:
    steps: np.ndarray
    times: np.ndarray
    curve: np.ndarray  # mean over seeds of ||theta_j - theta*||^2
    per_seed: np.ndarray
    theta_star: float
    floor: float
    segment: tuple
    eta: float
    r_squared: float
    eta_ci: tuple | None = None


def fit_decay(times, curve, floor_factor=10.0):
    """Fit ``log curve ~ a - eta t`` on the leading segment above
    ``floor_factor`` times the plateau (mean of the last quarter).

    Returns ``(eta, r_squared, (start, stop), floor)``.
    """
    curve = np.asarray(curve, dtype=float)
    floor = float(curve[-max(1, len(curve) // 4):].mean())
    above = curve > floor_factor * floor
    stop = int(np.argmin(above)) if not np.all(above) else len(curve)
    if stop < 3:
        return float("nan"), float("nan"), (0, stop), floor
    fit = fit_linear(np.asarray(times[:stop]), np.log(curve[:stop]))
    return -fit.slope, fit.r_squared, (0, stop), floor


def longtime_experiment(cfg: AbramConfig, potential: Potential, seeds: int = 1,
                        theta_star: float | None = None, checkpoints=None,
                        threads: int = 1, bootstrap: int = 0) -> LongtimeResult:
    """Decay of ``||theta_j - theta*||^2`` for a large particle system.

    ``theta*`` defaults to the quadrature minimiser of the relaxed objective at
    the chain's effective inverse temperature.  ``checkpoints`` are outer-step
    indices (default: every step).
    """
    if theta_star is None:
        dens = AdversarialDensity(potential, effective_gamma(cfg.gamma, cfg.noise_mode), cfg.ball)
        theta_star = minimiser_certificate(potential, dens).theta
    steps = np.arange(cfg.outer_steps + 1) if checkpoints is None else np.asarray(checkpoints)
    data = _Dummy()

    def job(s):
        run_cfg = replace(cfg, seed=derive_seed(cfg.seed, _TAG_MODEL, s))
        res = run_abram(run_cfg, data, constant_family(potential))
        return np.sum((res.theta_path[steps] - theta_star) ** 2, axis=1)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            per_seed = np.array(list(ex.map(job, range(seeds))))
    else:
        per_seed = np.array([job(s) for s in range(seeds)])
    curve = per_seed.mean(axis=0)
    times = steps * cfg.h
    eta, r2, seg, floor = fit_decay(times, curve)
    ci = None
    if bootstrap and seeds > 1:
        ci = bootstrap_ci(per_seed, lambda s: fit_decay(times, s.mean(axis=0))[0],
                          n_resamples=bootstrap, seed=cfg.seed)
    return LongtimeResult(steps, times, curve, per_seed, float(theta_star), floor, seg, eta, r2, ci)


class _Dummy:
    """One placeholder datum for potentials that ignore data."""

    features = np.zeros((1, 1))
    labels = np.zeros(1, dtype=np.int64)
