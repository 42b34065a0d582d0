"""Training losses with exact weight gradients, and the comparison metrics.

Each loss object precomputes everything that does not depend on the network
weights (geometry jets, harmonic members, sample weights) and exposes
``value_and_grad(mlp) -> (loss, flat_gradient)``.  Losses are means over the
(element, vertex) pairs of the batch (over elements for the P loss); the
sampled integrals use the weights of the local-frame sampling rule.
"""

from __future__ import annotations

import numpy as np

from navem_lab.basis.elements import anchor_polygon, geometry_jets, learned_vertices
from navem_lab.basis.encoding import element_frame, network_inputs
from navem_lab.errors import NonFinite
from navem_lab.neural import jet_backward, spatial_jet
from navem_lab.quadrature import edge_points_exponential, polygon_sample_points

TRAIN_ALG1_N = 10
TEST_ALG1_N = 13


def _finite(loss):
    if not np.isfinite(loss):
        raise NonFinite("non-finite loss value")
    return float(loss)


def _rotate_back(g_xi, rot):
    """Adjoint of ``g_xi = g_z @ R`` row-wise: ``g_z_bar = g_xi_bar @ R^T``."""
    return np.einsum("nk,nmk->nm", g_xi, rot)


class _InteriorBatch:
    """Stacked network inputs and boundary jets for B/P losses.

    Row layout: element-major, then learned vertex, then sample point.
    """

    def __init__(self, strategy, polygons, alg1_n=TRAIN_ALG1_N, rule=None):
        self.strategy = strategy
        rows_X, rows_B, rows_psi, rows_R, rows_w, rows_c, rows_group = [], [], [], [], [], [], []
        self.n_pairs = 0
        self.n_elements = len(polygons)
        group_offset = 0
        for polygon in polygons:
            frame = element_frame(polygon)
            q = rule(frame.local) if rule is not None else polygon_sample_points(frame.local, alg1_n, with_weights=True)
            bub, tra = geometry_jets(frame.local, q.points)
            learned = learned_vertices(strategy, frame.local)
            skip = next((j for j in range(frame.nv) if j not in learned), None)
            v = frame.local.vertices
            n = len(q.points)
            for j in learned:
                rows_X.append(network_inputs(frame, j, q.points))
                rows_B.append(bub)
                rows_psi.append(tra[:, j])
                rows_R.append(np.broadcast_to(frame.rotations[j], (n, 2, 2)))
                rows_w.append(q.weights)
                rows_c.append(np.broadcast_to(v[j] - (v[skip] if skip is not None else 0.0), (n, 2)))
                rows_group.append(group_offset + np.arange(n))
                self.n_pairs += 1
            group_offset += n
        self.X = np.vstack(rows_X)
        self.B = np.vstack(rows_B)
        self.psi = np.vstack(rows_psi)
        self.R = np.concatenate(rows_R)
        self.w = np.concatenate(rows_w)
        self.c = np.concatenate(rows_c)
        self.group = np.concatenate(rows_group)
        self.n_groups = group_offset
        # per-group weights (sample weight of each point, shared by its rows)
        self.group_w = np.zeros(self.n_groups)
        self.group_w[self.group] = self.w


class BResidualLoss:
    """Mean over (j, E) of the sampled squared Laplacian of phi^B."""

    def __init__(self, polygons, alg1_n=TRAIN_ALG1_N, rule=None):
        self.batch = _InteriorBatch("B", polygons, alg1_n, rule)

    def residual(self, jet):
        b = self.batch
        N = jet.output[:, 0]
        gN = np.einsum("nm,nmk->nk", jet.d_dx[:, 0, :], b.R)
        lapN = jet.laplacian_x[:, 0]
        B, gB, lapB = b.B[:, 0], b.B[:, 1:3], b.B[:, 3] + b.B[:, 5]
        return B * lapN + 2.0 * np.einsum("nk,nk->n", gB, gN) + N * lapB + b.psi[:, 3] + b.psi[:, 5]

    def value_and_grad(self, mlp, with_grad=True):
        b = self.batch
        jet = spatial_jet(mlp, b.X, second=True)
        r = self.residual(jet)
        loss = _finite(np.sum(b.w * r * r) / b.n_pairs)
        if not with_grad:
            return loss, None
        rb = 2.0 * b.w * r / b.n_pairs
        bar_out = (rb * (b.B[:, 3] + b.B[:, 5]))[:, None]
        bar_d = _rotate_back(2.0 * rb[:, None] * b.B[:, 1:3], b.R)[:, None, :]
        bar_d2 = np.repeat((rb * b.B[:, 0])[:, None, None], 2, axis=2)
        return loss, jet_backward(mlp, jet, bar_out, bar_d, bar_d2)


class PGradientLoss:
    """Mean over elements of sum_i || sum_j p_i(v_j) grad phi_j - grad p_i ||^2.

    With the derived vertex L this is the squared Frobenius defect of
    ``M = sum_{j != L} (v_j - v_L) grad phi_j^T`` against the identity.
    """

    def __init__(self, polygons, alg1_n=TRAIN_ALG1_N, rule=None):
        self.batch = _InteriorBatch("P", polygons, alg1_n, rule)

    def value_and_grad(self, mlp, with_grad=True):
        b = self.batch
        jet = spatial_jet(mlp, b.X, second=False)
        N = jet.output[:, 0]
        gN = np.einsum("nm,nmk->nk", jet.d_dx[:, 0, :], b.R)
        gphi = N[:, None] * b.B[:, 1:3] + b.B[:, :1] * gN + b.psi[:, 1:3]
        M = np.empty((b.n_groups, 2, 2))
        for i in range(2):
            for k in range(2):
                M[:, i, k] = np.bincount(b.group, b.c[:, i] * gphi[:, k], minlength=b.n_groups)
        D = M - np.eye(2)
        loss = _finite(np.sum(b.group_w[:, None, None] * D * D) / b.n_elements)
        if not with_grad:
            return loss, None
        Mb = 2.0 * b.group_w[:, None, None] * D / b.n_elements
        gphib = np.einsum("nik,ni->nk", Mb[b.group], b.c)
        bar_out = np.einsum("nk,nk->n", gphib, b.B[:, 1:3])[:, None]
        bar_d = _rotate_back(b.B[:, :1] * gphib, b.R)[:, None, :]
        return loss, jet_backward(mlp, jet, bar_out, bar_d)


def _hat_trace(anchor, j, points, edge):
    """Piecewise-linear Lagrange trace of vertex ``j`` and its tangential derivative."""
    nv = anchor.nv
    a = anchor.vertices[edge]
    e = anchor.edges[edge]
    L = anchor.edge_lengths[edge]
    s = (points - a) @ e / L ** 2
    if edge == j:
        return 1.0 - s, np.full(len(s), -1.0 / L)
    if edge == (j - 1) % nv:
        return s, np.full(len(s), 1.0 / L)
    return np.zeros(len(s)), np.zeros(len(s))


class _BoundaryBatch:
    """Harmonic members on exponentially clustered edge rules, per (j, E)."""

    def __init__(self, space, polygons, edge_count=50):
        H, Ht, y, yt, w = [], [], [], [], []
        for polygon in polygons:
            frame = element_frame(polygon)
            for j in range(frame.nv):
                anchor = anchor_polygon(frame, j)
                transforms = space.transforms(anchor, j)
                hv, ht, tr, trt, ww = [], [], [], [], []
                for i in range(anchor.nv):
                    q = edge_points_exponential(anchor, i, edge_count)
                    vals, grads = space.evaluate(anchor, j, q.points, transforms)
                    tangent = anchor.edges[i] / anchor.edge_lengths[i]
                    hv.append(vals)
                    ht.append(grads @ tangent)
                    t0, t1 = _hat_trace(anchor, j, q.points, i)
                    tr.append(t0)
                    trt.append(t1)
                    ww.append(q.weights)
                H.append(np.vstack(hv))
                Ht.append(np.vstack(ht))
                y.append(np.concatenate(tr))
                yt.append(np.concatenate(trt))
                w.append(np.concatenate(ww))
        # zero-weight padding lets mixed vertex counts share one array
        n = max(len(a) for a in w)

        def pad(arrs):
            return np.stack([np.pad(a, [(0, n - len(a))] + [(0, 0)] * (a.ndim - 1)) for a in arrs])

        self.H, self.Ht = pad(H), pad(Ht)
        self.y, self.yt, self.w = pad(y), pad(yt), pad(w)
        self.encodings = np.vstack([element_frame(p).encodings for p in polygons])
        self.n_pairs = len(self.encodings)


class HValueLoss:
    """Mean over (j, E) of ||v||^2 + ||dv/dt||^2 on the normalized boundary, v = phi^H - trace."""

    def __init__(self, space, polygons, edge_count=50, batch=None):
        self.batch = batch if batch is not None else _BoundaryBatch(space, polygons, edge_count)

    def value_and_grad(self, mlp, with_grad=True):
        b = self.batch
        jet = spatial_jet(mlp, b.encodings, second=False)
        c = jet.output
        r0 = np.einsum("npk,nk->np", b.H, c) - b.y
        r1 = np.einsum("npk,nk->np", b.Ht, c) - b.yt
        loss = _finite(np.sum(b.w * (r0 * r0 + r1 * r1)) / b.n_pairs)
        if not with_grad:
            return loss, None
        cb = 2.0 * (np.einsum("np,npk->nk", b.w * r0, b.H) + np.einsum("np,npk->nk", b.w * r1, b.Ht)) / b.n_pairs
        return loss, jet_backward(mlp, jet, cb)


class HGradientLoss:
    """Mean over (j, E) of ||(q^H - grad phi) . t||^2 on the normalized boundary."""

    def __init__(self, space, polygons, edge_count=50, batch=None):
        self.batch = batch if batch is not None else _BoundaryBatch(space, polygons, edge_count)

    def value_and_grad(self, mlp, with_grad=True):
        b = self.batch
        jet = spatial_jet(mlp, b.encodings, second=False)
        c = jet.output
        r = np.einsum("npk,nk->np", b.Ht[:, :, 1:], c) - b.yt
        loss = _finite(np.sum(b.w * r * r) / b.n_pairs)
        if not with_grad:
            return loss, None
        cb = 2.0 * np.einsum("np,npk->nk", b.w * r, b.Ht[:, :, 1:]) / b.n_pairs
        return loss, jet_backward(mlp, jet, cb)


def reproduction_metrics(basis, xi, weights, vertices):
    """(eps^{P,phi}, eps^{P,q}) of one element from a local-frame BasisEval."""
    recon = vertices.T @ basis.values  # (2, n)
    e_phi = sum(np.sqrt(np.sum(weights * (recon[i] - xi[:, i]) ** 2)) for i in range(2))
    grad_recon = np.einsum("ji,jnk->ink", vertices, basis.gradients)  # (2, n, 2)
    eye = np.eye(2)
    e_q = sum(np.sqrt(np.sum(weights[:, None] * (grad_recon[i] - eye[i]) ** 2)) for i in range(2))
    return float(e_phi), float(e_q)


def evaluate_metrics(bundle, polygons, alg1_n=TEST_ALG1_N):
    """Element-averaged reproduction metrics of ``bundle`` on ``polygons``."""
    totals = np.zeros(2)
    for polygon in polygons:
        frame = element_frame(polygon)
        q = polygon_sample_points(frame.local, alg1_n, with_weights=True)
        basis = bundle.evaluate_local(frame, q.points)
        totals += reproduction_metrics(basis, q.points, q.weights, frame.local.vertices)
    return tuple(totals / max(len(polygons), 1))

