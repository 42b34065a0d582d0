"""Model problems on the unit square with manufactured exact solutions.

Exact solutions carry hand-coded gradients and Hessians so the forcing
terms can be formed without symbolic algebra.  All callables take points of
shape ``(n, 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class ExactSolution:
    u: Callable
    grad: Callable
    hess: Callable  # (n, 2, 2)
    name: str = "exact"


@dataclass
class ProblemSpec:
    """Coefficients of ``-div(D grad u) + beta . grad u + gamma u = f`` with ``u = g_D`` on the boundary.

    For the nonlinear family ``D`` is scalar ``1 / (lam + u^2)`` and ``lam``
    is set; ``diffusion`` is then unused.
    """

    family: str
    diffusion: Callable | None
    advection: Callable | None
    reaction: Callable | None
    source: Callable
    dirichlet: Callable
    exact: ExactSolution | None = None
    lam: float | None = None

    @property
    def nonlinear(self):
        return self.lam is not None

    def coefficients(self, x):
        n = len(x)
        D = self.diffusion(x) if self.diffusion is not None else np.broadcast_to(np.eye(2), (n, 2, 2))
        beta = self.advection(x) if self.advection is not None else np.zeros((n, 2))
        gamma = self.reaction(x) if self.reaction is not None else np.zeros(n)
        return D, beta, gamma


def _cols(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x[:, 0], x[:, 1]


def _product(*factors):
    """Value, gradient and Hessian of a product from those of its factors."""
    v, g, h = factors[0]
    for v2, g2, h2 in factors[1:]:
        h = (h * v2[:, None, None] + h2 * v[:, None, None]
             + np.einsum("ni,nj->nij", g, g2) + np.einsum("ni,nj->nij", g2, g))
        g = g * v2[:, None] + g2 * v[:, None]
        v = v * v2
    return v, g, h


def _dar_jet(x):
    x1, x2 = _cols(x)
    a, b = x1 - 0.5, x2 - 0.5
    n = len(a)
    rho = np.pi ** 2 * (a * a + b * b)
    s, c = np.sin(rho), np.cos(rho)
    k = 2.0 * np.pi ** 2
    f1 = (s, np.stack([c * k * a, c * k * b], axis=1),
          np.stack([np.stack([-s * (k * a) ** 2 + c * k, -s * k * k * a * b], axis=1),
                    np.stack([-s * k * k * a * b, -s * (k * b) ** 2 + c * k], axis=1)], axis=1))
    f2 = (a, np.tile([1.0, 0.0], (n, 1)), np.zeros((n, 2, 2)))
    sx, cx, sy, cy = np.sin(np.pi * x1), np.cos(np.pi * x1), np.sin(np.pi * x2), np.cos(np.pi * x2)
    p2 = np.pi ** 2
    f3 = (1.0 + sx * sy, np.stack([np.pi * cx * sy, np.pi * sx * cy], axis=1),
          np.stack([np.stack([-p2 * sx * sy, p2 * cx * cy], axis=1),
                    np.stack([p2 * cx * cy, -p2 * sx * sy], axis=1)], axis=1))
    return _product(f1, f2, f3)


DAR_SOLUTION = ExactSolution(lambda x: _dar_jet(x)[0], lambda x: _dar_jet(x)[1],
                               lambda x: _dar_jet(x)[2], "dar")


def _nonlinear_jet(x):
    x1, x2 = _cols(x)
    a, b = x1 - 0.5, x2 - 0.5
    r2 = a * a + b * b
    th = 3.0 * np.pi * r2
    g, c = np.sin(th), np.cos(th)
    k = 6.0 * np.pi
    gg = np.stack([k * c * a, k * c * b], axis=1)
    ab = np.stack([a, b], axis=1)
    gh = k * (c[:, None, None] * np.eye(2) - k * g[:, None, None] * np.einsum("ni,nj->nij", ab, ab))
    u = g ** 3 / 8.0
    grad = (3.0 / 8.0) * (g * g)[:, None] * gg
    hess = (3.0 / 8.0) * (2.0 * g[:, None, None] * np.einsum("ni,nj->nij", gg, gg) + (g * g)[:, None, None] * gh)
    return u, grad, hess


NONLINEAR_SOLUTION = ExactSolution(lambda x: _nonlinear_jet(x)[0], lambda x: _nonlinear_jet(x)[1],
                               lambda x: _nonlinear_jet(x)[2], "nonlinear")


def linear_solution(c0=0.3, c1=1.0, c2=-0.7):
    """Affine exact solution ``c0 + c1 x1 + c2 x2``."""
    def u(x):
        x1, x2 = _cols(x)
        return c0 + c1 * x1 + c2 * x2

    return ExactSolution(u, lambda x: np.tile([c1, c2], (len(np.atleast_2d(x)), 1)),
                         lambda x: np.zeros((len(np.atleast_2d(x)), 2, 2)), "linear")


def dar_diffusion(x):
    x1, x2 = _cols(x)
    return np.stack([np.stack([1.0 + x2 ** 2, -x1 * x2], axis=1),
                     np.stack([-x1 * x2, 1.0 + x1 ** 2], axis=1)], axis=1)


def _dar_diffusion_divergence(x):
    """Row-wise divergence ``(sum_k d_k D_k1, sum_k d_k D_k2)``."""
    x1, x2 = _cols(x)
    return np.stack([-x1, -x2], axis=1)


def dar_advection(x):
    x1, x2 = _cols(x)
    return np.stack([x1, -x2], axis=1)


def dar_reaction(x):
    x1, x2 = _cols(x)
    return x1 * x2


def nonlinear_diffusion(u, lam):
    """``D(u) = 1 / (lam + u^2)`` and its derivative in ``u``."""
    den = lam + u * u
    return 1.0 / den, -2.0 * u / den ** 2


def manufacture_rhs(family, exact, lam=None):
    """Problem of the given family whose solution is ``exact``.

    ``family`` is ``"poisson"`` (D = I), ``"dar"`` (the variable
    diffusion-advection-reaction coefficients) or ``"nonlinear"``
    (``D = 1 / (lam + u^2)``, requires ``lam > 0``).
    """
    if family == "poisson":
        def f(x):
            return -np.trace(exact.hess(x), axis1=1, axis2=2)
        return ProblemSpec(family, None, None, None, f, exact.u, exact)
    if family == "dar":
        def f(x):
            g, H = exact.grad(x), exact.hess(x)
            div = np.einsum("nk,nk->n", _dar_diffusion_divergence(x), g) + np.einsum("nkl,nkl->n", dar_diffusion(x), H)
            return -div + np.einsum("nk,nk->n", dar_advection(x), g) + dar_reaction(x) * exact.u(x)
        return ProblemSpec(family, dar_diffusion, dar_advection, dar_reaction, f, exact.u, exact)
    if family == "nonlinear":
        if lam is None or not lam > 0:
            raise ValueError("the nonlinear family needs lam > 0")

        def f(x):
            u, g, H = exact.u(x), exact.grad(x), exact.hess(x)
            d, dd = nonlinear_diffusion(u, lam)
            return -(dd * np.sum(g * g, axis=1) + d * np.trace(H, axis1=1, axis2=2))
        return ProblemSpec(family, None, None, None, f, exact.u, exact, lam=float(lam))
    raise ValueError(f"unknown problem family {family!r}")


def named_problem(name, lam=1.0):
    """The problems exposed on the command line: poisson, dar, nonlinear, plus ``*-linear`` patch variants."""
    base, _, tag = name.partition("-")
    if tag not in ("", "linear") or base not in ("poisson", "dar", "nonlinear"):
        raise ValueError(f"unknown problem {name!r}")
    if tag:
        exact = linear_solution()
    else:
        exact = NONLINEAR_SOLUTION if base == "nonlinear" else DAR_SOLUTION
    return manufacture_rhs(base, exact, lam if base == "nonlinear" else None)
