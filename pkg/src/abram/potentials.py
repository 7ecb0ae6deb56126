"""Energies ``Phi(xi, theta)`` with gradients in both arguments.

All methods take ``xi`` of shape ``(..., xi_dim)`` and ``theta`` of shape
``(theta_dim,)`` (or broadcastable ``(..., theta_dim)``); scalars are promoted
when the dimension is 1.  ``value`` returns shape ``(...)``, ``grad_xi``
``(..., xi_dim)`` and ``grad_theta`` ``(..., theta_dim)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError
from .geometry import Ball, sample_uniform


def _as_vec(a, dim, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        if dim != 1:
            raise InvalidInputError(f"{name}: scalar given but dimension is {dim}")
        a = a.reshape(1)
    if a.shape[-1] != dim:
        raise InvalidInputError(f"{name}: expected trailing dimension {dim}, got {a.shape}")
    return a


class Potential:
    """Base class; subclasses implement the ``_value``/``_grad_*`` hooks on
    validated arrays."""

    xi_dim: int = 1
    theta_dim: int = 1
    name: str = "potential"

    def value(self, xi, theta):
        return self._value(_as_vec(xi, self.xi_dim, "xi"), _as_vec(theta, self.theta_dim, "theta"))

    def grad_xi(self, xi, theta):
        return self._grad_xi(_as_vec(xi, self.xi_dim, "xi"), _as_vec(theta, self.theta_dim, "theta"))

    def grad_theta(self, xi, theta):
        return self._grad_theta(_as_vec(xi, self.xi_dim, "xi"), _as_vec(theta, self.theta_dim, "theta"))

    def weighted_grad_theta(self, xi, theta, weights):
        """``sum_i weights[i] * grad_theta(xi[i], theta)`` for a batch ``xi``.

        Models override this with a single weighted backward pass.
        """
        g = self.grad_theta(xi, theta)
        return np.asarray(weights, dtype=float) @ g

    __call__ = value

    def _value(self, xi, theta):
        raise NotImplementedError

    def _grad_xi(self, xi, theta):
        raise NotImplementedError

    def _grad_theta(self, xi, theta):
        raise NotImplementedError


class FunctionPotential(Potential):
    """Potential assembled from three vectorised callables."""

    def __init__(self, value, grad_xi, grad_theta, xi_dim=1, theta_dim=1, name="potential"):
        self._v, self._gx, self._gt = value, grad_xi, grad_theta
        self.xi_dim, self.theta_dim, self.name = int(xi_dim), int(theta_dim), name

    def _value(self, xi, theta):
        return self._v(xi, theta)

    def _grad_xi(self, xi, theta):
        return self._gx(xi, theta)

    def _grad_theta(self, xi, theta):
        return self._gt(xi, theta)

    def __repr__(self):
        return f"FunctionPotential({self.name!r})"


def shifted_quadratic_1d(c: float = 0.1) -> Potential:
    """``(xi - c)^2 / 2``; theta is ignored."""
    c = float(c)
    return FunctionPotential(
        lambda x, t: 0.5 * (x[..., 0] - c) ** 2,
        lambda x, t: x - c,
        lambda x, t: np.zeros(np.broadcast_shapes(x.shape[:-1] + (1,), t.shape)),
        name=f"shifted_quadratic(c={c})",
    )


def coupled_quadratic_1d() -> Potential:
    """``(xi + theta)^2 / 2``."""
    return FunctionPotential(
        lambda x, t: 0.5 * (x[..., 0] + t[..., 0]) ** 2,
        lambda x, t: x + t,
        lambda x, t: x + t,
        name="coupled_quadratic",
    )


def zero_potential(dim: int = 1) -> Potential:
    """``Phi == 0``; the reflected random walk it drives is uniform at equilibrium."""
    return FunctionPotential(
        lambda x, t: np.zeros(np.broadcast_shapes(x.shape[:-1], t.shape[:-1])),
        lambda x, t: np.zeros_like(x),
        lambda x, t: np.zeros(np.broadcast_shapes(x.shape[:-1] + (1,), t.shape)),
        xi_dim=dim,
        name="zero",
    )


def linear_quadratic(dim: int = 1) -> Potential:
    """``||xi - theta||^2`` with ``theta`` living in the same space as ``xi``."""
    return FunctionPotential(
        lambda x, t: np.sum((x - t) ** 2, axis=-1),
        lambda x, t: 2.0 * (x - t),
        lambda x, t: 2.0 * (t - x),
        xi_dim=dim,
        theta_dim=dim,
        name=f"linear_quadratic(d={dim})",
    )


@dataclass(frozen=True)
class Mollifier:
    """``m(xi) = xi * s(||xi||)`` with ``s == 1`` on ``[0, eps]``, ``s == 0``
    beyond ``1.9 eps`` and a C^1 cubic Hermite ramp in between."""

    eps: float

    @property
    def _width(self):
        return 0.9 * self.eps

    def _s(self, r):
        u = np.clip((r - self.eps) / self._width, 0.0, 1.0)
        return 1.0 - 3.0 * u**2 + 2.0 * u**3

    def _ds(self, r):
        u = np.clip((r - self.eps) / self._width, 0.0, 1.0)
        return (-6.0 * u + 6.0 * u**2) / self._width

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        r = np.linalg.norm(xi, axis=-1, keepdims=True)
        s = np.where(r <= self.eps, 1.0, self._s(r))
        return np.where(r <= self.eps, xi, xi * s)

    def jacobian(self, xi):
        """Shape ``(..., d, d)``; symmetric."""
        xi = np.asarray(xi, dtype=float)
        d = xi.shape[-1]
        r = np.linalg.norm(xi, axis=-1)
        s = self._s(r)
        ds = self._ds(r)
        safe_r = np.where(r > 0, r, 1.0)
        outer = xi[..., :, None] * xi[..., None, :]
        jac = s[..., None, None] * np.eye(d) + (ds / safe_r)[..., None, None] * outer
        return jac


def mollified_quadratic(dim: int, eps: float) -> Potential:
    """``||m(xi) - theta||^2``; its xi-gradient vanishes on the ``2 eps`` sphere."""
    m = Mollifier(float(eps))

    def value(x, t):
        return np.sum((m(x) - t) ** 2, axis=-1)

    def grad_xi(x, t):
        diff = m(x) - t
        return 2.0 * np.einsum("...ij,...j->...i", m.jacobian(x), diff)

    def grad_theta(x, t):
        return 2.0 * (t - m(x))

    p = FunctionPotential(value, grad_xi, grad_theta, xi_dim=dim, theta_dim=dim,
                          name=f"mollified_quadratic(d={dim}, eps={eps})")
    p.mollifier = m
    return p


class LossPotential(Potential):
    """``Phi(xi, theta) = loss(g(y + xi | theta), z)`` for a differentiable model.

    ``y`` may be a single input ``(d,)`` or a batch ``(n, d)``; in the batch
    case row ``i`` of ``xi`` perturbs row ``i`` of ``y`` (one datum per particle).
    """

    def __init__(self, model, y, z):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != model.input_dim:
            raise InvalidInputError(
                f"datum has {y.shape[-1]} features, model expects {model.input_dim}")
        self.model = model
        self.y = y
        self.z = np.asarray(z, dtype=np.int64)
        self.xi_dim = model.input_dim
        self.theta_dim = model.n_params
        self.name = "loss"

    def _inputs(self, xi):
        return np.broadcast_to(self.y, np.broadcast_shapes(self.y.shape, xi.shape)) + xi

    def _flat(self, xi):
        x = self._inputs(xi)
        lead = x.shape[:-1]
        z = np.broadcast_to(self.z, lead)
        return x.reshape(-1, self.xi_dim), z.reshape(-1), lead

    def _value(self, xi, theta):
        x, z, lead = self._flat(xi)
        return self.model.loss(theta, x, z).reshape(lead)

    def _grad_xi(self, xi, theta):
        x, z, lead = self._flat(xi)
        return self.model.grad_input(theta, x, z).reshape(lead + (self.xi_dim,))

    def _grad_theta(self, xi, theta):
        x, z, lead = self._flat(xi)
        return self.model.per_sample_grad_params(theta, x, z).reshape(lead + (self.theta_dim,))

    def weighted_grad_theta(self, xi, theta, weights):
        xi = _as_vec(xi, self.xi_dim, "xi")
        x, z, _ = self._flat(xi)
        return self.model.grad_params(theta, x, z, weights=np.asarray(weights, dtype=float).reshape(-1))


def loss_potential(model, datum) -> LossPotential:
    y, z = datum
    return LossPotential(model, y, z)


@dataclass
class GradCheckReport:
    max_rel_err_xi: float
    max_rel_err_theta: float

    def ok(self, tol=1e-5):
        return self.max_rel_err_xi < tol and self.max_rel_err_theta < tol


def _fd_grad(f: Callable, x, h):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def _rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def grad_check(p: Potential, xi, theta, h_fd: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients at a single point with centered differences.

    The error is normalised by the largest gradient component, so a zero
    gradient is checked in absolute terms.
    """
    xi = _as_vec(xi, p.xi_dim, "xi").astype(float)
    theta = _as_vec(theta, p.theta_dim, "theta").astype(float)
    fd_xi = _fd_grad(lambda x: float(p.value(x, theta)), xi, h_fd)
    fd_th = _fd_grad(lambda t: float(p.value(xi, t)), theta, h_fd)
    return GradCheckReport(_rel_err(p.grad_xi(xi, theta), fd_xi),
                           _rel_err(p.grad_theta(xi, theta), fd_th))


def convexity_diagnostic(p: Potential, samples: int, ball: Ball, rng=None,
                         theta_radius: float = 1.0, n_atoms: int = 1) -> float:
    """Smallest observed strong-convexity constant of ``theta -> G(theta, nu)``.

    Draws ``samples`` random pairs ``(theta, theta~)`` in the ``theta_radius``
    ball and random empirical measures ``nu`` with ``n_atoms`` uniform atoms in
    ``ball`` (``n_atoms=1`` gives Dirac measures), and returns
    ``min <G(t)-G(t~), t-t~> / (2 ||t-t~||^2)``.
    """
    from .core import g_estimate

    rng = np.random.default_rng(0) if rng is None else rng
    tball = Ball(theta_radius, "l2", p.theta_dim)
    lam = np.inf
    for _ in range(int(samples)):
        atoms = sample_uniform(ball, rng, size=n_atoms)
        t1, t2 = sample_uniform(tball, rng), sample_uniform(tball, rng)
        delta = t1 - t2
        nrm2 = float(delta @ delta)
        if nrm2 == 0.0:
            continue
        dg = g_estimate(t1, atoms, p) - g_estimate(t2, atoms, p)
        lam = min(lam, float(dg @ delta) / (2.0 * nrm2))
    return lam
