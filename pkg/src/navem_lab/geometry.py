"""Polygons, reference maps and the closed-form boundary machinery.

Every field evaluation returns a :class:`Jet` carrying value, gradient and
Hessian so that callers can compose exact derivatives by the chain rule.
Point arguments may be a single point of shape ``(2,)`` or a batch ``(n, 2)``;
the jet arrays follow the same leading shape.

Edge ``i`` joins vertex ``i`` to vertex ``i + 1`` (cyclic, 0-based), and
``normal(i)`` is the unit normal pointing *into* the polygon, so that signed
distances are positive inside a convex element.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from navem_lab import kernels
from navem_lab.errors import DegenerateGeometry, DerivativeSingular, InvalidPolygon, NotStarShaped

EPS_SING = 1e-12


@dataclass
class Jet:
    """Value, gradient and (symmetric) Hessian of a scalar field."""

    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray

    @classmethod
    def constant(cls, c, shape=()):
        c = np.broadcast_to(np.asarray(c, dtype=float), shape)
        return cls(c.copy(), np.zeros(shape + (2,)), np.zeros(shape + (2, 2)))

    @property
    def laplacian(self):
        return self.hessian[..., 0, 0] + self.hessian[..., 1, 1]

    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value + other, self.gradient, self.hessian)
        return Jet(self.value + other.value, self.gradient + other.gradient, self.hessian + other.hessian)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value * other, self.gradient * np.asarray(other)[..., None],
                       self.hessian * np.asarray(other)[..., None, None])
        a, b = self, other
        ga, gb = a.gradient, b.gradient
        cross = ga[..., :, None] * gb[..., None, :]
        return Jet(
            a.value * b.value,
            a.value[..., None] * gb + b.value[..., None] * ga,
            a.value[..., None, None] * b.hessian + b.value[..., None, None] * a.hessian
            + cross + np.swapaxes(cross, -1, -2),
        )

    __rmul__ = __mul__
    __radd__ = __add__


def _jet_from_packed(packed):
    """Unpack the kernel layout ``[v, gx, gy, hxx, hxy, hyy]``."""
    h = np.empty(packed.shape[:-1] + (2, 2))
    h[..., 0, 0] = packed[..., 3]
    h[..., 0, 1] = h[..., 1, 0] = packed[..., 4]
    h[..., 1, 1] = packed[..., 5]
    return Jet(packed[..., 0].copy(), packed[..., 1:3].copy(), h)


@dataclass(frozen=True)
class PolygonClass:
    vertex_count: int
    convex: bool

    @property
    def tag(self):
        return f"{self.vertex_count}_{'convex' if self.convex else 'concave'}"

    @classmethod
    def from_tag(cls, tag):
        nv, kind = tag.split("_")
        return cls(int(nv), kind == "convex")


def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    return ((d1 == 0 and on_seg(q1, q2, p1)) or (d2 == 0 and on_seg(q1, q2, p2))
            or (d3 == 0 and on_seg(p1, p2, q1)) or (d4 == 0 and on_seg(p1, p2, q2)))


def kernel_center(vertices, tol=1e-10):
    """Return a point of the polygon kernel maximizing the distance to edge lines.

    The centroid is accepted when it lies strictly inside the kernel; otherwise
    the Chebyshev center of the kernel is found by linear programming, with a
    grid search as the last resort.  Raises NotStarShaped if no kernel point
    has positive clearance.
    """
    v = np.asarray(vertices, dtype=float)
    e = np.roll(v, -1, axis=0) - v
    lengths = np.hypot(e[:, 0], e[:, 1])
    n = np.stack([-e[:, 1], e[:, 0]], axis=1) / lengths[:, None]
    diam = np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1))

    def clearance(x):
        return np.min(np.einsum("ij,ij->i", x[None, :] - v, n))

    c = polygon_centroid(v)
    if clearance(c) > tol * diam:
        return c
    try:
        from scipy.optimize import linprog

        # maximize r subject to n_i . (x - v_i) >= r
        a_ub = np.hstack([-n, np.ones((len(v), 1))])
        b_ub = -np.einsum("ij,ij->i", n, v)
        res = linprog([0.0, 0.0, -1.0], A_ub=a_ub, b_ub=b_ub,
                      bounds=[(None, None), (None, None), (None, diam)], method="highs")
        if res.status == 0 and res.x[2] > tol * diam:
            return np.asarray(res.x[:2])
    except (ImportError, ValueError):
        pass
    lo, hi = v.min(axis=0), v.max(axis=0)
    g = np.linspace(0.0, 1.0, 101)
    pts = lo + (hi - lo) * np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    d = np.min(np.einsum("pij,ij->pi", pts[:, None, :] - v[None], n), axis=1)
    k = np.argmax(d)
    if d[k] > tol * diam:
        return pts[k]
    raise NotStarShaped("polygon kernel is empty")


def polygon_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_centroid(v):
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = 0.5 * np.sum(cr)
    return np.array([np.sum((x + xn) * cr), np.sum((y + yn) * cr)]) / (6.0 * a)


class Polygon:
    """Counterclockwise, simple, star-shaped polygon with cached geometry."""

    def __init__(self, vertices, *, validate=True):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise InvalidPolygon(f"need at least 3 vertices of dimension 2, got shape {v.shape}")
        v.setflags(write=False)
        self.vertices = v
        if validate:
            self._validate()

    def _validate(self):
        v = self.vertices
        nv = len(v)
        if not np.all(np.isfinite(v)):
            raise InvalidPolygon("non-finite vertex coordinates")
        if np.any(self.edge_lengths <= 0.0):
            raise InvalidPolygon("degenerate edge")
        for a in range(nv):
            for b in range(a + 1, nv):
                if np.all(v[a] == v[b]):
                    raise InvalidPolygon("repeated vertex")
        if self.signed_area <= 0.0:
            raise InvalidPolygon("vertices are not counterclockwise")
        for a in range(nv):
            for b in range(a + 2, nv):
                if a == 0 and b == nv - 1:
                    continue
                if _segments_intersect(v[a], v[(a + 1) % nv], v[b], v[(b + 1) % nv]):
                    raise InvalidPolygon("self-intersecting polygon")
        _ = self.star_center

    def __len__(self):
        return len(self.vertices)

    def __repr__(self):
        return f"Polygon({self.vertices.tolist()!r})"

    @property
    def nv(self):
        return len(self.vertices)

    @cached_property
    def edges(self):
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    @cached_property
    def edge_lengths(self):
        return np.hypot(self.edges[:, 0], self.edges[:, 1])

    @cached_property
    def normals(self):
        """Unit normals pointing into the polygon."""
        e = self.edges
        return np.stack([-e[:, 1], e[:, 0]], axis=1) / self.edge_lengths[:, None]

    @cached_property
    def signed_area(self):
        return polygon_area(self.vertices)

    @property
    def area(self):
        return abs(self.signed_area)

    @cached_property
    def centroid(self):
        return polygon_centroid(self.vertices)

    @cached_property
    def diameter(self):
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)))

    @cached_property
    def star_center(self):
        return kernel_center(self.vertices)

    @cached_property
    def interior_angles(self):
        v = self.vertices
        to_next = np.roll(v, -1, axis=0) - v
        to_prev = np.roll(v, 1, axis=0) - v
        cross = to_next[:, 0] * to_prev[:, 1] - to_next[:, 1] * to_prev[:, 0]
        dot = np.einsum("ij,ij->i", to_next, to_prev)
        return np.mod(np.arctan2(cross, dot), 2 * np.pi)

    @cached_property
    def is_convex(self):
        e = self.edges
        ep = np.roll(e, 1, axis=0)
        cross = ep[:, 0] * e[:, 1] - ep[:, 1] * e[:, 0]
        return bool(np.all(cross > 1e-12 * self.diameter ** 2))

    @property
    def class_tag(self):
        return PolygonClass(self.nv, self.is_convex)

    def contains(self, x, tol=0.0):
        """Strict point-in-polygon test (winding parity) for a batch of points."""
        x = np.atleast_2d(x)
        v = self.vertices
        inside = np.zeros(len(x), dtype=bool)
        for i in range(self.nv):
            a, b = v[i], v[(i + 1) % self.nv]
            cond = (a[1] > x[:, 1]) != (b[1] > x[:, 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = a[0] + (x[:, 1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= cond & (x[:, 0] < xint)
        return inside & (self.boundary_distance(x) > tol)

    def boundary_distance(self, x):
        """Unsigned Euclidean distance from points to the polygon boundary."""
        x = np.atleast_2d(x)
        v = self.vertices
        d = np.full(len(x), np.inf)
        for i in range(self.nv):
            a, e, L = v[i], self.edges[i], self.edge_lengths[i]
            t = np.clip((x - a) @ e / L ** 2, 0.0, 1.0)
            d = np.minimum(d, np.linalg.norm(x - a - t[:, None] * e, axis=1))
        return d

    def signed_boundary_distance(self, x):
        """Distance to the boundary, positive outside and negative inside."""
        x = np.atleast_2d(x)
        d = self.boundary_distance(x)
        return np.where(self.contains(x), -d, d)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError(f"points must have trailing dimension 2, got {x.shape}")
    return x


def signed_distance(polygon, edge_index, x):
    """Signed distance to the line carrying edge ``edge_index``."""
    x = _as_points(x)
    n = polygon.normals[edge_index]
    shape = x.shape[:-1]
    value = (x - polygon.vertices[edge_index]) @ n
    return Jet(value, np.broadcast_to(n, shape + (2,)).copy(), np.zeros(shape + (2, 2)))


def trimming_function(polygon, edge_index, x):
    x = _as_points(x)
    v = polygon.vertices
    L = polygon.edge_lengths[edge_index]
    mid = 0.5 * (v[edge_index] + v[(edge_index + 1) % len(v)])
    r = x - mid
    value = ((0.5 * L) ** 2 - np.sum(r * r, axis=-1)) / L
    hess = np.broadcast_to(-2.0 / L * np.eye(2), x.shape[:-1] + (2, 2)).copy()
    return Jet(value, -2.0 * r / L, hess)


def edge_adf(polygon, edge_index, x, derivatives=True, eps=EPS_SING):
    """Approximate distance function vanishing exactly on the closed edge."""
    d = signed_distance(polygon, edge_index, x)
    t = trimming_function(polygon, edge_index, x)
    dv, tv = d.value, t.value
    q = np.sqrt(tv * tv + dv ** 4)
    # q - t cancels for t > 0; use the conjugate form there
    r = np.where(tv > 0, 0.5 * dv ** 4 / np.where(tv > 0, q + tv, 1.0), 0.5 * (q - tv))
    phi = np.sqrt(dv * dv + r * r)
    if not derivatives:
        return Jet(phi, np.full(phi.shape + (2,), np.nan), np.full(phi.shape + (2, 2), np.nan))
    if np.any(phi < eps):
        raise DerivativeSingular(f"edge {edge_index}: ADF derivative requested on the zero set")
    outer = lambda a, b: a[..., :, None] * b[..., None, :]  # noqa: E731
    gd, gt = d.gradient, t.gradient
    gr = (dv[..., None] ** 3 * gd - r[..., None] * gt) / q[..., None]
    hr = (-(outer(gt, gr) + outer(gr, gt)) - 2.0 * outer(gr, gr) + 3.0 * dv[..., None, None] ** 2 * outer(gd, gd)
          - r[..., None, None] * t.hessian) / q[..., None, None]
    gphi = (dv[..., None] * gd + r[..., None] * gr) / phi[..., None]
    dd, rr, pp = dv[..., None, None], r[..., None, None], phi[..., None, None]
    hphi = (dd * dd * outer(gr, gr) + rr * (rr * outer(gd, gd) - dd * (outer(gd, gr) + outer(gr, gd)))) / pp ** 3 \
        + rr * hr / pp
    return Jet(phi, gphi, hphi)


def curvilinear_coordinate(polygon, edge_index, x):
    """Edge parameter of the orthogonal projection of ``x`` (0 at v_i, 1 at v_{i+1})."""
    x = _as_points(x)
    e = polygon.edges[edge_index]
    g = e / (polygon.edge_lengths[edge_index] ** 2)
    value = (x - polygon.vertices[edge_index]) @ g
    shape = x.shape[:-1]
    return Jet(value, np.broadcast_to(g, shape + (2,)).copy(), np.zeros(shape + (2, 2)))


def polygon_jets(polygon, x, derivatives=True, eps=EPS_SING):
    """Bubble jet and the transfinite interpolant jets of every vertex at once.

    Returns ``(bubble, transfinite)`` where ``transfinite`` has an extra
    trailing-before-components axis of length ``nv`` (shape ``(..., nv)`` for
    values).  Dispatches to the compiled kernel when available.
    """
    x = _as_points(x)
    shape = x.shape[:-1]
    pts = np.ascontiguousarray(x.reshape(-1, 2))
    order = 2 if derivatives else 0
    b, t, singular = kernels.polygon_jets(np.ascontiguousarray(polygon.vertices), pts, order, eps)
    if singular:
        raise DerivativeSingular("bubble/transfinite derivatives requested too close to the boundary")
    b = b.reshape(shape + (6,))
    t = t.reshape(shape + (polygon.nv, 6))
    if not derivatives:
        z = lambda s: np.zeros(s)  # noqa: E731
        return (Jet(b[..., 0].copy(), z(shape + (2,)), z(shape + (2, 2))),
                Jet(t[..., 0].copy(), z(shape + (polygon.nv, 2)), z(shape + (polygon.nv, 2, 2))))
    return _jet_from_packed(b), _jet_from_packed(t)


def bubble(polygon, x, derivatives=True, variant="adf", eps=EPS_SING):
    """Bubble function vanishing on the boundary.

    ``variant="adf"`` (default, any polygon) is the order-2 normalized ADF;
    ``variant="product"`` is the product of edge-line distances, meaningful
    only for convex polygons.
    """
    if variant == "product":
        jet = None
        for i in range(polygon.nv):
            d = signed_distance(polygon, i, x)
            jet = d if jet is None else jet * d
        return jet
    if variant != "adf":
        raise ValueError(f"unknown bubble variant {variant!r}")
    return polygon_jets(polygon, x, derivatives, eps)[0]


def transfinite_interpolant(polygon, vertex_index, x, derivatives=True, eps=EPS_SING):
    """Transfinite extension of the piecewise-linear hat of ``vertex_index``."""
    _, t = polygon_jets(polygon, x, derivatives, eps)
    return Jet(t.value[..., vertex_index], t.gradient[..., vertex_index, :], t.hessian[..., vertex_index, :, :])


def boundary_operator(polygon, vertex_index, x, v, derivatives=True, eps=EPS_SING):
    """Compose ``bubble * v + transfinite_j``; exact hat trace on the boundary."""
    b, t = polygon_jets(polygon, x, derivatives, eps)
    psi = Jet(t.value[..., vertex_index], t.gradient[..., vertex_index, :], t.hessian[..., vertex_index, :, :])
    if not derivatives:
        return Jet(b.value * v.value + psi.value, psi.gradient, psi.hessian)
    return b * v + psi


@dataclass(frozen=True)
class ReferenceMap:
    """Similarity map ``x -> scale * R (x - translation)``."""

    translation: np.ndarray
    rotation: np.ndarray
    scale: float

    def forward(self, x):
        return self.scale * (np.asarray(x, dtype=float) - self.translation) @ self.rotation.T

    def inverse(self, y):
        return np.asarray(y, dtype=float) @ self.rotation / self.scale + self.translation

    def gradient_to_physical(self, g):
        """Chain rule for ``grad (f o map) = scale * R^T grad f``."""
        return self.scale * np.asarray(g) @ self.rotation

    def gradient_to_reference(self, g):
        return np.asarray(g) @ self.rotation.T / self.scale


def rotation_to_axis(direction):
    """Rotation matrix sending ``direction`` onto the positive x1-axis."""
    theta = np.arctan2(direction[1], direction[0])
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, s], [-s, c]])


def normalize(polygon, anchor_vertex=0):
    """Map a polygon into the reference square [-1, 1]^2.

    The centroid goes to the origin, the farthest vertex to the unit circle and
    ``anchor_vertex`` onto the positive x1-axis.
    """
    c = polygon.centroid
    radius = np.max(np.hypot(*(polygon.vertices - c).T))
    if not radius > 0.0:
        raise DegenerateGeometry("zero-diameter polygon")
    rot = rotation_to_axis(polygon.vertices[anchor_vertex] - c)
    ref = ReferenceMap(c.copy(), rot, 1.0 / radius)
    return Polygon(ref.forward(polygon.vertices), validate=False), ref
