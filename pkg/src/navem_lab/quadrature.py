"""Sampling points and quadrature rules on triangles, polygons and edges."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from navem_lab.errors import UnsupportedOrder


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    domain_tag: str  # "edge", "triangle", "polygon" or "sampling"

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class SubTriangulation:
    star_center: np.ndarray
    triangles: np.ndarray  # (n_tri, 3, 2): center, v_i, v_{i+1}

    @property
    def areas(self):
        t = self.triangles
        a, b = t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def alg1_points(n, eps=1e-12):
    """Interior points of the reference triangle (0,0), (1,0), (0,1).

    Points are biased toward the edge opposite the origin; the loop order is
    ``i`` outer, ``j`` inner, producing ``(n+1)(n+2)/2`` points.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    pts = []
    for i in range(n + 1):
        for j in range(n - i + 1):
            k = n - i - j
            x0 = (i + 0.5) / (n + 1.5)
            y0 = (j + 0.5) / (n + 1.5)
            z0 = (k + 0.5) / (n + 1.5)
            z = 1.0 - np.cos(0.5 * np.pi * z0)
            s = (1.0 - z) / (1.0 - z0 + eps)
            pts.append((s * x0, s * y0))
    return np.array(pts)


def sub_triangulate(polygon):
    """Fan triangulation of a star-shaped polygon from a kernel point."""
    c = polygon.star_center
    v = polygon.vertices
    tris = np.stack([np.broadcast_to(c, v.shape), v, np.roll(v, -1, axis=0)], axis=1)
    return SubTriangulation(np.asarray(c, dtype=float), tris)


def map_reference_triangle(tri, ref_pts):
    """Affine image of reference-triangle points in triangle ``tri`` (3, 2)."""
    a = tri[0]
    jac = np.stack([tri[1] - a, tri[2] - a], axis=1)
    return a + ref_pts @ jac.T


def polygon_sample_points(polygon, n, eps=1e-12, with_weights=False):
    """Algorithm-1 points pushed into every sub-triangle of ``polygon``.

    With ``with_weights`` a sampling rule is returned whose weights are
    ``triangle_area / points_per_triangle``.
    """
    sub = sub_triangulate(polygon)
    ref = alg1_points(n, eps)
    pts = np.concatenate([map_reference_triangle(t, ref) for t in sub.triangles])
    if not with_weights:
        return pts
    w = np.repeat(sub.areas / len(ref), len(ref))
    return QuadratureRule(pts, w, "sampling")


def edge_points_exponential(polygon, edge_index, count=50):
    """Edge rule clustered exponentially toward both endpoints.

    Half the parameters are ``0.5 * exp(-4 (sqrt(m) - sqrt(k)) / sqrt(m))``
    for ``k = 0..m-1``, ``m = count/2``; the rest are their mirror images.
    (Starting at ``k = 1`` would put ``t = 0.5`` in both halves.)
    Weights are the trapezoid weights on the parameter, completed with the
    end segments so that they sum to the edge length.
    """
    if count < 2 or count % 2:
        raise ValueError("count must be an even integer >= 2")
    m = count // 2
    k = np.arange(m)
    half = 0.5 * np.exp(-4.0 * (np.sqrt(m) - np.sqrt(k)) / np.sqrt(m))
    t = np.concatenate([half, 1.0 - half[::-1]])
    # midpoints of neighbours, closed at 0 and 1, give trapezoid-like cells
    bounds = np.concatenate([[0.0], 0.5 * (t[1:] + t[:-1]), [1.0]])
    wt = np.diff(bounds)
    v = polygon.vertices
    a, b = v[edge_index], v[(edge_index + 1) % len(v)]
    L = polygon.edge_lengths[edge_index]
    return QuadratureRule(a + t[:, None] * (b - a), wt * L, "edge")


# Symmetric rules on the reference triangle, weights summing to 1/2.
_A4, _WA4 = 0.44594849091596488632, 0.11169079483900573285
_B4, _WB4 = 0.09157621350977074346, 0.054975871827660933819
_A6, _WA6 = 0.24928674517091042129, 0.058393137863189683013
_B6, _WB6 = 0.06308901449150222834, 0.02542245318510340846
_C6, _D6, _WC6 = 0.053145049844816947353, 0.31035245103378440542, 0.041425537809186787597


def _orbit3(a):
    c = 1.0 - 2.0 * a
    return [(a, a), (a, c), (c, a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b), (b, a), (a, c), (c, a), (b, c), (c, b)]


def gauss_triangle(order):
    """Symmetric Gauss rule on the reference triangle exact to ``order``."""
    if order == 2:
        pts = [(1 / 6, 1 / 6), (2 / 3, 1 / 6), (1 / 6, 2 / 3)]
        w = [1 / 6] * 3
    elif order == 4:
        pts = _orbit3(_A4) + _orbit3(_B4)
        w = [_WA4] * 3 + [_WB4] * 3
    elif order == 6:
        pts = _orbit3(_A6) + _orbit3(_B6) + _orbit6(_C6, _D6)
        w = [_WA6] * 3 + [_WB6] * 3 + [_WC6] * 6
    else:
        raise UnsupportedOrder(f"no triangle rule of order {order}; use 2, 4 or 6")
    return QuadratureRule(np.array(pts), np.array(w), "triangle")


def polygon_gauss(polygon, order):
    """Gauss rule on the sub-triangulation of ``polygon``."""
    ref = gauss_triangle(order)
    sub = sub_triangulate(polygon)
    pts = np.concatenate([map_reference_triangle(t, ref.points) for t in sub.triangles])
    w = np.concatenate([2.0 * a * ref.weights for a in sub.areas])
    return QuadratureRule(pts, w, "polygon")
