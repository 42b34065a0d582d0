"""Lowest-order virtual element reference discretization.

The local space is never evaluated pointwise; everything goes through the
energy projection onto linear polynomials written in the scaled monomials
``m = (1, (x - c) / h, (y - c) / h)`` with ``c`` the vertex average and
``h`` the element diameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from navem_lab.errors import DegenerateGeometry
from navem_lab.quadrature import polygon_gauss


@dataclass
class ElementProjector:
    center: np.ndarray
    h: float
    D: np.ndarray  # (nv, 3) monomials at the vertices
    B: np.ndarray  # (3, nv)
    G: np.ndarray  # (3, 3) = B @ D
    pi_star: np.ndarray  # (3, nv) monomial coefficients of the projection of each basis function
    stabilization: np.ndarray  # (nv, nv) = (I - Pi)^T (I - Pi)

    @property
    def pi(self):
        """Projection in the vertex-value basis, ``D @ pi_star``."""
        return self.D @ self.pi_star

    def monomials(self, x):
        x = np.atleast_2d(x)
        s = (x - self.center) / self.h
        return np.column_stack([np.ones(len(x)), s])

    def projected_values(self, x):
        """Pi phi_i at points ``x``: shape (nv, n)."""
        return (self.monomials(x) @ self.pi_star).T

    def projected_gradients(self, n=1):
        """grad Pi phi_i (constant per element) broadcast to (nv, n, 2)."""
        g = self.pi_star[1:].T / self.h
        return np.broadcast_to(g[:, None, :], (len(g), n, 2)).copy()


def build_projector(polygon):
    """Energy projector and stabilization of the lowest-order space on ``polygon``."""
    v = polygon.vertices
    nv = polygon.nv
    h = polygon.diameter
    if not (h > 0.0 and polygon.area > 1e-14 * h * h):
        raise DegenerateGeometry("element has zero area or diameter")
    c = v.mean(axis=0)
    D = np.column_stack([np.ones(nv), (v - c) / h])
    # outward normal times length of each edge; each vertex collects half of its two edges
    e = polygon.edges
    nl = np.stack([e[:, 1], -e[:, 0]], axis=1)
    B = np.empty((3, nv))
    B[0] = 1.0 / nv
    B[1:] = (0.5 * (nl + np.roll(nl, 1, axis=0))).T / h
    G = B @ D
    pi_star = np.linalg.solve(G, B)
    pi = D @ pi_star
    r = np.eye(nv) - pi
    return ElementProjector(c, h, D, B, G, pi_star, r.T @ r)


def vem_local_forms(polygon, projector, D, beta, gamma, rule):
    """Local matrix ``A[j, i]`` of the diffusion-advection-reaction form.

    ``D`` (n, 2, 2), ``beta`` (n, 2) and ``gamma`` (n,) are the coefficients at
    the points of ``rule``.  The stabilization is scaled by the element mean
    of ``trace(D) / 2`` and added to the diffusive part.
    """
    vals = projector.projected_values(rule.points)
    grads = projector.projected_gradients(len(rule.weights))
    A = galerkin_form(vals, grads, rule.weights, D, beta, gamma)
    return A + stabilization_scale(D, rule.weights) * projector.stabilization


def galerkin_form(vals, grads, w, D, beta, gamma):
    """``A[j, i] = sum_n w (D grad phi_i . grad phi_j + (beta . grad phi_i) phi_j + gamma phi_i phi_j)``.

    Shapes ``vals (..., nv, n)``, ``grads (..., nv, n, 2)``, ``w (..., n)``,
    ``D (..., n, 2, 2)``, ``beta (..., n, 2)``, ``gamma (..., n)``; leading
    axes batch over elements.
    """
    A = np.einsum("...n,...ink,...nkl,...jnl->...ji", w, grads, D, grads)
    A += np.einsum("...n,...ink,...nk,...jn->...ji", w, grads, beta, vals)
    A += np.einsum("...n,...in,...n,...jn->...ji", w, vals, gamma, vals)
    return A


def stabilization_scale(D, weights):
    """Element mean of trace(D) / 2 under the quadrature weights."""
    tr = 0.5 * (D[:, 0, 0] + D[:, 1, 1])
    return float(np.sum(weights * tr) / np.sum(weights))


def vem_errors(mesh, values, exact_u, exact_grad, order=6):
    """Projected L2 errors ``(err0, errgrad)`` of the vertex field ``values``."""
    e0 = e1 = 0.0
    for cell, polygon in zip(mesh.cells, mesh.polygons):
        proj = build_projector(polygon)
        rule = polygon_gauss(polygon, order)
        uE = values[cell]
        uh = uE @ proj.projected_values(rule.points)
        guh = proj.pi_star[1:] @ uE / proj.h
        e0 += np.sum(rule.weights * (exact_u(rule.points) - uh) ** 2)
        e1 += np.sum(rule.weights * np.sum((exact_grad(rule.points) - guh) ** 2, axis=1))
    return float(np.sqrt(e0)), float(np.sqrt(e1))
