"""Pure-numpy implementation of the polygon jet kernel.

Mirrors ``_kernels.pyx`` exactly; it is used whenever the compiled module is
unavailable (or ``NAVEM_LAB_PURE=1``) and serves as the reference in the
kernel equivalence tests.

Packed component layout: ``[value, d/dx, d/dy, d2/dxx, d2/dxy, d2/dyy]``.
"""

import numpy as np


def _edge_adf(v, pts, i, order):
    nv = len(v)
    a, b = v[i], v[(i + 1) % nv]
    e = b - a
    L = np.hypot(e[0], e[1])
    n = np.array([-e[1], e[0]]) / L
    mid = 0.5 * (a + b)
    d = (pts - a) @ n
    r0 = pts - mid
    t = (0.25 * L * L - np.einsum("ij,ij->i", r0, r0)) / L
    q = np.sqrt(t * t + d ** 4)
    # q - t cancels for t > 0; use the conjugate form there
    r = np.where(t > 0, 0.5 * d ** 4 / np.where(t > 0, q + t, 1.0), 0.5 * (q - t))
    phi = np.sqrt(d * d + r * r)
    s = (pts - a) @ e / (L * L)
    if order == 0:
        return phi, None, None, s
    gt = -2.0 * r0 / L
    ht = -2.0 / L
    gr = ((d ** 3)[:, None] * n - r[:, None] * gt) / q[:, None]
    # hessians stored as (xx, xy, yy)
    hr = np.empty((len(pts), 3))
    hr[:, 0] = (-2 * gt[:, 0] * gr[:, 0] - 2 * gr[:, 0] ** 2 + 3 * d * d * n[0] * n[0] - r * ht) / q
    hr[:, 1] = (-(gt[:, 0] * gr[:, 1] + gr[:, 0] * gt[:, 1]) - 2 * gr[:, 0] * gr[:, 1] + 3 * d * d * n[0] * n[1]) / q
    hr[:, 2] = (-2 * gt[:, 1] * gr[:, 1] - 2 * gr[:, 1] ** 2 + 3 * d * d * n[1] * n[1] - r * ht) / q
    gphi = (d[:, None] * n + r[:, None] * gr) / phi[:, None]
    # n n^T - gphi gphi^T expanded so nothing cancels near the edge
    p3 = phi ** 3
    hphi = np.empty((len(pts), 3))
    hphi[:, 0] = (d * d * gr[:, 0] ** 2 + r * (r * n[0] * n[0] - 2 * d * n[0] * gr[:, 0])) / p3 + r * hr[:, 0] / phi
    hphi[:, 1] = ((d * d * gr[:, 0] * gr[:, 1] + r * (r * n[0] * n[1] - d * (n[0] * gr[:, 1] + gr[:, 0] * n[1]))) / p3
                  + r * hr[:, 1] / phi)
    hphi[:, 2] = (d * d * gr[:, 1] ** 2 + r * (r * n[1] * n[1] - 2 * d * n[1] * gr[:, 1])) / p3 + r * hr[:, 2] / phi
    return phi, gphi, hphi, s


def _outer3(a, b):
    """Symmetrized outer product a b^T + b a^T packed as (xx, xy, yy)."""
    return np.stack([2 * a[..., 0] * b[..., 0], a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0],
                     2 * a[..., 1] * b[..., 1]], axis=-1)


def polygon_jets(vertices, pts, order, eps):
    """Return ``(bubble (n,6), transfinite (n,nv,6), singular)``."""
    v = np.asarray(vertices, dtype=float)
    pts = np.asarray(pts, dtype=float)
    nv, npts = len(v), len(pts)
    bub = np.zeros((npts, 6))
    tra = np.zeros((npts, nv, 6))
    phi = np.empty((nv, npts))
    s = np.empty((nv, npts))
    gphi = np.empty((nv, npts, 2))
    hphi = np.empty((nv, npts, 3))
    for i in range(nv):
        # points on the zero set give 0/0 derivatives; they are flagged below
        with np.errstate(divide="ignore", invalid="ignore"):
            p, g, h, si = _edge_adf(v, pts, i, order)
        phi[i], s[i] = p, si
        if order > 0:
            gphi[i], hphi[i] = g, h
    mu = phi.min(axis=0)
    if order > 0 and np.any(mu < eps):
        return bub, tra, True
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(phi > 0, mu / phi, 1.0)
    rho = np.where(mu > 0, rho, (phi == 0).astype(float))
    bval = mu / np.sqrt(np.sum(rho * rho, axis=0))
    bub[:, 0] = bval
    U = rho.sum(axis=0)
    prev = np.roll(np.arange(nv), 1)
    P = rho * (1.0 - s) + rho[prev] * s[prev]
    psi = P / U
    tra[:, :, 0] = psi.T
    if order == 0:
        return bub, tra, False

    # bubble derivatives with g_i = B / phi_i <= 1
    g3 = (bval / phi) ** 3
    gb = np.einsum("ip,ipk->pk", g3, gphi)
    hb = (3.0 / bval)[:, None] * np.stack([gb[:, 0] ** 2, gb[:, 0] * gb[:, 1], gb[:, 1] ** 2], axis=-1)
    w = 3.0 * g3 / phi
    hb -= np.stack([np.sum(w * gphi[..., 0] ** 2, 0), np.sum(w * gphi[..., 0] * gphi[..., 1], 0),
                    np.sum(w * gphi[..., 1] ** 2, 0)], axis=-1)
    hb += np.einsum("ip,ipk->pk", g3, hphi)
    bub[:, 1:3] = gb
    bub[:, 3:6] = hb

    # transfinite weights u_i = mu / phi_i (quotient is invariant to the constant mu)
    u = rho
    gu = -(mu / phi ** 2)[..., None] * gphi
    hu = (mu / phi ** 2)[..., None] * (
        (2.0 / phi)[..., None] * np.stack([gphi[..., 0] ** 2, gphi[..., 0] * gphi[..., 1], gphi[..., 1] ** 2], -1)
        - hphi)
    e = np.roll(v, -1, axis=0) - v
    gs = e / np.sum(e * e, axis=1)[:, None]  # (nv, 2), constant per edge
    gU = gu.sum(axis=0)
    hU = hu.sum(axis=0)
    gsb = np.broadcast_to(gs[:, None, :], (nv, npts, 2))
    gP = (gu * (1.0 - s)[..., None] - u[..., None] * gsb
          + gu[prev] * s[prev][..., None] + u[prev][..., None] * gsb[prev])
    hP = (hu * (1.0 - s)[..., None] - _outer3(gu, gsb)
          + hu[prev] * s[prev][..., None] + _outer3(gu[prev], gsb[prev]))
    gpsi = (gP - psi[..., None] * gU[None]) / U[None, :, None]
    hpsi = (hP - psi[..., None] * hU[None] - _outer3(gpsi, np.broadcast_to(gU, gpsi.shape))) / U[None, :, None]
    tra[:, :, 1:3] = np.transpose(gpsi, (1, 0, 2))
    tra[:, :, 3:6] = np.transpose(hpsi, (1, 0, 2))
    return bub, tra, False
