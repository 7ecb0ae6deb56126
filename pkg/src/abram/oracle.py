"""Deterministic quadrature ground truth for the adversarial Gibbs density.

The density on the ball is ``exp(gamma * Phi(xi, theta)) / Z`` with ``Z``
computed by composite Simpson on a tensor grid (1-D or 2-D).  Exponents are
shifted by their grid maximum before exponentiation, so ``gamma * Phi`` in the
thousands is fine.  Everything below is a weighted sum over the same nodes, so
``grad_F`` is the exact derivative of the discrete ``F``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import InvalidInputError, PreconditionError
from .geometry import Ball, NormKind
from .potentials import Potential

DEFAULT_GRID_1D = 4001
DEFAULT_GRID_2D = 401
MAX_GRID_1D = 2_000_001
# node spacing as a fraction of the boundary-layer width 1 / (gamma * max|grad Phi|);
# Simpson's relative error on exp(-x / s) is about (h / s)^4 / 180
_LAYER_FRACTION = 0.02


def _auto_grid_1d(potential: Potential, gamma: float, ball: Ball, theta) -> int:
    probe = np.linspace(-ball.radius, ball.radius, 1001)[:, None]
    slope = float(np.max(np.abs(potential.grad_xi(probe, theta))))
    n = int(np.ceil(2 * ball.radius * gamma * slope / _LAYER_FRACTION))
    n = min(max(n, DEFAULT_GRID_1D), MAX_GRID_1D)
    return n + 1 - n % 2


def simpson_weights(n: int, a: float, b: float) -> np.ndarray:
    """Composite Simpson weights for ``n`` (odd, >= 3) equispaced nodes on [a, b]."""
    if n < 3:
        raise PreconditionError(f"Simpson needs at least 3 nodes, got {n}")
    if n % 2 == 0:
        raise PreconditionError(f"Simpson needs an odd node count, got {n}")
    h = (b - a) / (n - 1)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * h / 3.0


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniformly weighted atoms, shape ``(N, d)``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] == 0:
            raise InvalidInputError("empirical measure has no atoms")
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def weights(self):
        return np.full(self.n, 1.0 / self.n)

    def mean(self):
        return self.points.mean(axis=0)

    def var(self):
        return self.points.var(axis=0)


@dataclass(frozen=True)
class AdversarialDensity:
    """``xi -> exp(gamma Phi(xi, theta)) 1[xi in ball] / Z``.

    ``grid`` is the node count per axis.  In 1-D it defaults to enough nodes
    to resolve the steepest exponential layer at the construction ``theta``;
    the grid is then kept fixed under :meth:`at` so that ``F`` stays a smooth
    function of ``theta``.  For ``dim == 1`` the L2 and LInf balls coincide.
    """

    potential: Potential
    gamma: float
    ball: Ball
    theta: np.ndarray = field(default_factory=lambda: np.zeros(1))
    grid: int | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise InvalidInputError("gamma must be nonnegative")
        if self.ball.dim not in (1, 2):
            raise PreconditionError("quadrature oracle supports xi_dim 1 or 2 only")
        if self.ball.dim != self.potential.xi_dim:
            raise InvalidInputError("ball and potential dimensions differ")
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if self.grid is None:
            grid = (_auto_grid_1d(self.potential, self.gamma, self.ball, self.theta) if self.ball.dim == 1
                    else DEFAULT_GRID_2D)
            object.__setattr__(self, "grid", grid)

    def at(self, theta):
        return replace(self, theta=np.atleast_1d(np.asarray(theta, dtype=float)))

    @cached_property
    def _nodes(self):
        eps, n = self.ball.radius, int(self.grid)
        axis = np.linspace(-eps, eps, n)
        w1 = simpson_weights(n, -eps, eps)
        if self.ball.dim == 1:
            return axis[:, None], w1
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        nodes = np.stack([gx.ravel(), gy.ravel()], axis=1)
        w = np.outer(w1, w1).ravel()
        if self.ball.norm_kind is NormKind.L2:
            w = w * (np.linalg.norm(nodes, axis=1) <= eps)
        return nodes, w

    @cached_property
    def _table(self):
        nodes, w = self._nodes
        phi = np.asarray(self.potential.value(nodes, self.theta), dtype=float)
        expo = self.gamma * phi
        shift = np.max(expo[w > 0])
        u = np.exp(expo - shift)
        z = float(np.sum(w * u))
        return phi, u / z, shift, z

    @property
    def nodes(self):
        return self._nodes[0]

    @property
    def weights(self):
        return self._nodes[1]

    @property
    def values(self):
        """Density at the grid nodes."""
        return self._table[1]

    def log_normaliser(self):
        _, _, shift, z = self._table
        return shift + np.log(z)

    def __call__(self, at):
        at = np.asarray(at, dtype=float)
        pts = at[..., None] if (self.ball.dim == 1 and (at.ndim == 0 or at.shape[-1] != 1)) else at
        phi = np.asarray(self.potential.value(pts, self.theta), dtype=float)
        dens = np.exp(self.gamma * phi - self.log_normaliser())
        return np.where(self.ball.contains(pts), dens, 0.0)

    def expect(self, f_values):
        """Quadrature of node values ``f_values`` (shape ``(nodes, ...)``) against the density."""
        wp = self.weights * self.values
        return np.tensordot(wp, f_values, axes=(0, 0))

    def integral(self):
        return float(np.sum(self.weights * self.values))

    # 1-D helpers -----------------------------------------------------------

    def _require_1d(self):
        if self.ball.dim != 1:
            raise PreconditionError("operation needs a 1-D density")

    @cached_property
    def _cdf(self):
        self._require_1d()
        x = self.nodes[:, 0]
        p = self.values
        c = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))])
        return x, c / c[-1]

    def cdf(self, at):
        x, c = self._cdf
        return np.interp(at, x, c, left=0.0, right=1.0)

    def quantile(self, u):
        x, c = self._cdf
        # collapse flat stretches so interp sees a strictly increasing abscissa
        keep = np.concatenate([[True], np.diff(c) > 0])
        return np.interp(u, c[keep], x[keep])

    def sample(self, n, rng):
        """Inverse-CDF draws, shape ``(n, 1)``."""
        return self.quantile(rng.uniform(0.0, 1.0, size=n))[:, None]


def density(at, d: AdversarialDensity):
    return d(at)


def F(theta, d: AdversarialDensity) -> float:
    """``int Phi(xi, theta) pi(dxi | theta)``."""
    d = d.at(theta)
    phi = d._table[0]
    return float(d.expect(phi))


def grad_F(theta, d: AdversarialDensity) -> np.ndarray:
    """``E[grad_theta Phi] + gamma Cov(Phi, grad_theta Phi)`` under the density."""
    d = d.at(theta)
    phi = d._table[0]
    gth = np.asarray(d.potential.grad_theta(d.nodes, d.theta), dtype=float)
    e_phi = d.expect(phi)
    e_g = d.expect(gth)
    cov = d.expect(phi[:, None] * gth) - e_phi * e_g
    return e_g + d.gamma * cov


def mean(d: AdversarialDensity) -> np.ndarray:
    return d.expect(d.nodes)


# distances ------------------------------------------------------------------

def _as_empirical(a):
    return a if isinstance(a, EmpiricalMeasure) else EmpiricalMeasure(np.asarray(a, dtype=float))


def _w2sq_empirical(xa, xb):
    xa, xb = np.sort(xa), np.sort(xb)
    na, nb = len(xa), len(xb)
    if na == nb:
        return float(np.mean((xa - xb) ** 2))
    # merge the two step quantile functions on their common breakpoints
    cuts = np.union1d(np.arange(1, na) / na, np.arange(1, nb) / nb)
    edges = np.concatenate([[0.0], cuts, [1.0]])
    mid = 0.5 * (edges[1:] + edges[:-1])
    qa = xa[np.minimum((mid * na).astype(np.int64), na - 1)]
    qb = xb[np.minimum((mid * nb).astype(np.int64), nb - 1)]
    return float(np.sum(np.diff(edges) * (qa - qb) ** 2))


def wasserstein2_1d(a, b) -> float:
    """W2 distance via the quantile coupling.

    ``a`` is an empirical measure (or array of samples); ``b`` is another one
    or an :class:`AdversarialDensity`.
    """
    a = _as_empirical(a)
    if a.points.shape[1] != 1:
        raise PreconditionError("wasserstein2_1d needs 1-D measures")
    xa = a.points[:, 0]
    if isinstance(b, AdversarialDensity):
        na = len(xa)
        m = max(16 * na, 1 << 16)
        u = (np.arange(m) + 0.5) / m
        qa = np.sort(xa)[np.minimum((u * na).astype(np.int64), na - 1)]
        return float(np.sqrt(np.mean((qa - b.quantile(u)) ** 2)))
    b = _as_empirical(b)
    return float(np.sqrt(_w2sq_empirical(xa, b.points[:, 0])))


def _bin_masses(obj, edges):
    edges = np.asarray(edges, dtype=float)
    if isinstance(obj, AdversarialDensity):
        return np.diff(obj.cdf(edges))
    if isinstance(obj, EmpiricalMeasure) or (isinstance(obj, np.ndarray) and obj.ndim >= 1):
        pts = _as_empirical(obj).points[:, 0]
        counts, _ = np.histogram(pts, bins=edges)
        return counts / len(pts)
    if callable(obj):
        masses = np.empty(len(edges) - 1)
        for k in range(len(edges) - 1):
            x = np.linspace(edges[k], edges[k + 1], 33)
            masses[k] = simpson_weights(33, edges[k], edges[k + 1]) @ np.asarray(obj(x), dtype=float)
        return masses
    raise InvalidInputError(f"cannot bin object of type {type(obj).__name__}")


def tv_distance_1d(a, b, edges) -> float:
    """Total variation between two 1-D laws, binned on ``edges``.

    Each side may be an :class:`AdversarialDensity`, an empirical measure or
    sample array (histogrammed and normalised), or a vectorised pdf callable.
    Mass falling outside ``edges`` is ignored.
    """
    ma, mb = _bin_masses(a, edges), _bin_masses(b, edges)
    if ma.shape != mb.shape:
        raise InvalidInputError("bin mismatch")
    return 0.5 * float(np.sum(np.abs(ma - mb)))


def cube_root_bins(n_samples: int, cap: int = 200) -> int:
    return int(min(cap, max(1, np.ceil(n_samples ** (1.0 / 3.0)))))
