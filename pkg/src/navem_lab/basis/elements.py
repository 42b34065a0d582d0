"""Pointwise composition of network jets with the closed-form boundary jets.

All quantities here live in an element's local frame ``xi`` (see
:mod:`navem_lab.basis.encoding`); callers rescale gradients by
``frame.scale`` to return to physical coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from navem_lab import kernels
from navem_lab.basis.encoding import network_inputs
from navem_lab.errors import DerivativeSingular
from navem_lab.geometry import EPS_SING, Polygon
from navem_lab.neural import forward, spatial_jet


@dataclass
class BasisEval:
    """Basis values ``(nv, n)``, gradients ``(nv, n, 2)`` and optional Laplacians ``(nv, n)``."""

    values: np.ndarray
    gradients: np.ndarray | None = None
    laplacians: np.ndarray | None = None

    def scaled(self, scale):
        """Chain rule for ``x -> scale * x`` (local frame to physical)."""
        g = None if self.gradients is None else self.gradients * scale
        lap = None if self.laplacians is None else self.laplacians * scale ** 2
        return BasisEval(self.values, g, lap)


def geometry_jets(local_polygon, xi, derivatives=True):
    """Packed bubble ``(n, 6)`` and transfinite ``(n, nv, 6)`` jets at local points."""
    pts = np.ascontiguousarray(np.atleast_2d(xi), dtype=float)
    b, t, singular = kernels.polygon_jets(np.ascontiguousarray(local_polygon.vertices), pts,
                                          2 if derivatives else 0, EPS_SING)
    if singular:
        raise DerivativeSingular("basis derivatives requested on or too near the element boundary")
    return b, t


def derived_vertex(polygon):
    """Vertex whose P-NAVEM function is implied by the partition of unity.

    The largest interior angle wins; near-ties go to the lowest index.
    """
    ang = polygon.interior_angles
    return int(np.flatnonzero(ang >= ang.max() - 1e-9)[0])


def learned_vertices(strategy, polygon):
    if strategy == "P":
        skip = derived_vertex(polygon)
        return [j for j in range(polygon.nv) if j != skip]
    return list(range(polygon.nv))


def triangle_hats(polygon, x):
    """Exact P1 hat functions and their (constant) gradients on a triangle."""
    v = polygon.vertices
    x = np.atleast_2d(x)
    jac = np.stack([v[1] - v[0], v[2] - v[0]], axis=1)
    lam12 = np.linalg.solve(jac, (x - v[0]).T)
    values = np.vstack([1.0 - lam12.sum(axis=0), lam12])
    inv = np.linalg.inv(jac)
    g = np.vstack([-inv.sum(axis=0), inv])  # rows: gradients of lambda_0..2
    grads = np.broadcast_to(g[:, None, :], (3, len(x), 2)).copy()
    return BasisEval(values, grads, np.zeros((3, len(x))))


def compose_bp(bub, tra, j, n_val, n_grad_xi=None, n_lap=None):
    """phi_j = B N + psi_j and its gradient / Laplacian from packed jets."""
    B = bub[:, 0]
    psi = tra[:, j]
    val = B * n_val + psi[:, 0]
    if n_grad_xi is None:
        return val, None, None
    gB = bub[:, 1:3]
    grad = n_val[:, None] * gB + B[:, None] * n_grad_xi + psi[:, 1:3]
    lap = None
    if n_lap is not None:
        lapB = bub[:, 3] + bub[:, 5]
        lap = B * n_lap + 2.0 * np.einsum("nk,nk->n", gB, n_grad_xi) + n_val * lapB + psi[:, 3] + psi[:, 5]
    return val, grad, lap


def bp_evaluate(model, strategy, frame, xi, derivatives=True, laplacian=False):
    """B- or P-NAVEM basis on the local frame of one element."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n, nv = len(xi), frame.nv
    bub, tra = geometry_jets(frame.local, xi, derivatives)
    learned = learned_vertices(strategy, frame.local)
    X = np.vstack([network_inputs(frame, j, xi) for j in learned])
    values = np.empty((nv, n))
    grads = np.empty((nv, n, 2)) if derivatives else None
    laps = np.empty((nv, n)) if laplacian else None
    if derivatives:
        jet = spatial_jet(model, X, second=laplacian)
        out = jet.output[:, 0]
        dz = jet.d_dx[:, 0, :]
        lz = jet.laplacian_x[:, 0] if laplacian else None
    else:
        out = forward(model, X)[:, 0]
    for k, j in enumerate(learned):
        rows = slice(k * n, (k + 1) * n)
        if derivatives:
            g_xi = dz[rows] @ frame.rotations[j]
            v, g, lap = compose_bp(bub, tra, j, out[rows], g_xi, lz[rows] if laplacian else None)
            grads[j] = g
            if laplacian:
                laps[j] = lap
        else:
            v = compose_bp(bub, tra, j, out[rows])[0]
        values[j] = v
    if len(learned) < nv:
        skip = next(j for j in range(nv) if j not in learned)
        others = [j for j in range(nv) if j != skip]
        values[skip] = 1.0 - values[others].sum(axis=0)
        if derivatives:
            grads[skip] = -grads[others].sum(axis=0)
        if laplacian:
            laps[skip] = -laps[others].sum(axis=0)
    return BasisEval(values, grads, laps)


def h_evaluate(value_net, grad_net, space, frame, xi, cache=None):
    """H-NAVEM values and gradient-net gradients on the local frame.

    ``cache`` (a dict) memoizes the per-vertex Phi transforms of this frame.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n, nv = len(xi), frame.nv
    coef = forward(value_net, frame.encodings)
    coef_q = forward(grad_net, frame.encodings)
    values = np.empty((nv, n))
    grads = np.empty((nv, n, 2))
    for j in range(nv):
        anchor = anchor_polygon(frame, j)
        transforms = None
        if cache is not None:
            transforms = cache.get(j)
            if transforms is None:
                transforms = cache[j] = space.transforms(anchor, j)
        h, gh = space.evaluate(anchor, j, frame.to_anchor(j, xi), transforms)
        values[j] = h @ coef[j]
        grads[j] = np.einsum("nkd,k->nd", gh[:, 1:], coef_q[j]) @ frame.rotations[j]
    return BasisEval(values, grads, None)


def anchor_polygon(frame, j):
    """The element in the anchor frame of vertex ``j``."""
    return Polygon(frame.local.vertices @ frame.rotations[j].T, validate=False)
