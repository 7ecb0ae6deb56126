"""Norm balls: membership, nearest-point projection, uniform sampling."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidInputError, PreconditionError


class NormKind(str, Enum):
    L2 = "l2"
    LINF = "linf"


@dataclass(frozen=True)
class Ball:
    """Closed ball ``{x : ||x|| <= radius}`` in ``dim`` dimensions.

    No upper bound is imposed on ``radius``.  Convergence guarantees for the
    coupled dynamics assume radius < 1; learning runs often use larger L2 radii.
    """

    radius: float
    norm_kind: NormKind = NormKind.L2
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "norm_kind", NormKind(self.norm_kind))
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise InvalidInputError(f"ball radius must be positive, got {self.radius}")
        if int(self.dim) < 1:
            raise InvalidInputError(f"ball dim must be >= 1, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))

    def norm(self, x):
        x = np.asarray(x, dtype=float)
        if self.norm_kind is NormKind.L2:
            return np.sqrt(np.sum(x * x, axis=-1))
        return np.max(np.abs(x), axis=-1)

    def contains(self, x):
        return self.norm(x) <= self.radius


def _check(x, ball):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (ball.dim,) and not (ball.dim == 1 and x.ndim == 0):
        raise InvalidInputError(f"expected trailing dimension {ball.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite input to projection")
    return x


def project_to_ball(x, ball: Ball):
    """Nearest point of ``ball`` to each row of ``x``.

    L2 rescales radially, LInf clamps componentwise.  Interior points are
    returned unchanged (bit-for-bit).
    """
    x = _check(x, ball)
    if ball.norm_kind is NormKind.LINF or ball.dim == 1 or x.ndim == 0:
        # in one dimension both norms reduce to a clamp
        return np.clip(x, -ball.radius, ball.radius)
    r = ball.norm(x)
    outside = r > ball.radius
    if not np.any(outside):
        return x.copy()
    scale = np.ones_like(r)
    scale[outside] = ball.radius / r[outside]
    out = x * scale[..., None]
    # radial rescaling can land a ulp outside; pull it back
    over = ball.norm(out) > ball.radius
    while np.any(over):
        out[over] = np.nextafter(out[over], 0.0)
        over = ball.norm(out) > ball.radius
    return out


def sample_uniform(ball: Ball, rng: np.random.Generator, size=None):
    """Uniform draw(s) from ``ball``; shape ``(dim,)`` or ``(size, dim)``."""
    n = 1 if size is None else int(size)
    d = ball.dim
    if ball.norm_kind is NormKind.LINF:
        out = rng.uniform(-ball.radius, ball.radius, size=(n, d))
    else:
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = ball.radius * rng.uniform(0.0, 1.0, size=n) ** (1.0 / d)
        out = project_to_ball(g * r[:, None], ball)
    return out[0] if size is None else out


def inner_normal(x, ball: Ball, tol: float = 1e-9):
    """Inward unit normal ``-x/||x||`` at a boundary point of an L2 ball."""
    if ball.norm_kind is not NormKind.L2:
        raise PreconditionError("inner normals are only defined for L2 balls")
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(np.abs(r - ball.radius) > tol):
        raise PreconditionError("point is not on the ball boundary")
    return -x / r
