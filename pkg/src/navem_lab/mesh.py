"""Polygonal meshes: data model, JSON I/O, generators and DOF numbering."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from navem_lab.errors import GenerationError, InvalidPolygon, ParseError, ValidationError
from navem_lab.geometry import Polygon, polygon_area


@dataclass
class DofMap:
    vertex_to_dof: np.ndarray  # -1 on Dirichlet vertices
    n_dof: int

    @cached_property
    def free_vertices(self):
        return np.flatnonzero(self.vertex_to_dof >= 0)


@dataclass
class Mesh:
    vertices: np.ndarray
    cells: list
    boundary_vertex_flags: np.ndarray
    name: str = field(default="mesh", compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = [list(map(int, c)) for c in self.cells]
        self.boundary_vertex_flags = np.asarray(self.boundary_vertex_flags, dtype=bool)

    @cached_property
    def polygons(self):
        return [Polygon(self.vertices[c]) for c in self.cells]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @cached_property
    def h(self):
        return max(p.diameter for p in self.polygons)

    def class_histogram(self):
        return Counter(p.class_tag.tag for p in self.polygons)

    def boundary_edges(self):
        """Undirected edges used by exactly one cell."""
        count = Counter()
        for c in self.cells:
            for a, b in zip(c, c[1:] + c[:1]):
                count[(min(a, b), max(a, b))] += 1
        return [e for e, k in count.items() if k == 1]


def validate_mesh(mesh):
    """Raise ValidationError unless ``mesh`` satisfies the mesh invariants."""
    nv = mesh.n_vertices
    if mesh.boundary_vertex_flags.shape != (nv,):
        raise ValidationError("boundary flag array does not match vertex count")
    used = np.zeros(nv, dtype=bool)
    directed = Counter()
    for k, c in enumerate(mesh.cells):
        if len(c) < 3 or min(c) < 0 or max(c) >= nv:
            raise ValidationError(f"cell {k} has invalid vertex indices")
        if len(set(c)) != len(c):
            raise ValidationError(f"cell {k} repeats a vertex")
        used[c] = True
        for a, b in zip(c, c[1:] + c[:1]):
            directed[(a, b)] += 1
    if not used.all():
        raise ValidationError(f"dangling vertices: {np.flatnonzero(~used).tolist()}")
    for (a, b), k in directed.items():
        if k > 1:
            raise ValidationError(f"edge ({a},{b}) traversed twice in the same direction")
    try:
        polys = [Polygon(mesh.vertices[c]) for c in mesh.cells]
    except InvalidPolygon as exc:
        raise ValidationError(f"invalid cell: {exc}") from exc
    for a, b in mesh.boundary_edges():
        if not (mesh.boundary_vertex_flags[a] and mesh.boundary_vertex_flags[b]):
            raise ValidationError(f"boundary edge ({a},{b}) has an unflagged endpoint")
    mesh.__dict__["polygons"] = polys
    return mesh


def _orient_ccw(vertices, cell):
    return cell if polygon_area(vertices[cell]) > 0 else cell[::-1]


def mesh_from_dict(data, name="mesh"):
    try:
        vertices = np.array(data["vertices"], dtype=float)
        cells = [list(map(int, c)) for c in data["cells"]]
        dirichlet = [int(i) for i in data["dirichlet_vertices"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed mesh document: {exc}") from exc
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise ParseError("vertices must be a list of [x, y] pairs")
    flags = np.zeros(len(vertices), dtype=bool)
    if dirichlet and (min(dirichlet) < 0 or max(dirichlet) >= len(vertices)):
        raise ValidationError("dirichlet vertex index out of range")
    flags[dirichlet] = True
    cells = [_orient_ccw(vertices, c) if len(c) >= 3 and max(c) < len(vertices) else c for c in cells]
    return validate_mesh(Mesh(vertices, cells, flags, name=name))


def load_mesh(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return mesh_from_dict(data, name=path.stem)


def _fmt(x):
    return format(float(x), ".17g")


def mesh_to_json(mesh):
    """Canonical text: 17 significant digits, one vertex/cell per line."""
    verts = ",\n    ".join(f"[{_fmt(x)}, {_fmt(y)}]" for x, y in mesh.vertices)
    cells = ",\n    ".join("[" + ", ".join(str(i) for i in c) + "]" for c in mesh.cells)
    dirichlet = ", ".join(str(i) for i in np.flatnonzero(mesh.boundary_vertex_flags))
    return (f'{{\n  "vertices": [\n    {verts}\n  ],\n  "cells": [\n    {cells}\n  ],\n'
            f'  "dirichlet_vertices": [{dirichlet}]\n}}\n')


def save_mesh(mesh, path):
    Path(path).write_text(mesh_to_json(mesh))


FIXTURES = ("voronoi_1", "voronoi_2", "quadcc_coarse", "quad_convex_16", "hanging")


def fixture_path(name):
    """Path of a committed fixture mesh shipped with the package."""
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    return Path(__file__).with_name("fixtures") / f"{name}.json"


def load_fixture(name):
    return load_mesh(fixture_path(name))


def _unit_square_boundary(vertices, tol=1e-14):
    x, y = vertices[:, 0], vertices[:, 1]
    return (np.abs(x) < tol) | (np.abs(x - 1) < tol) | (np.abs(y) < tol) | (np.abs(y - 1) < tol)


def _structured_grid(n):
    g = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(g, g)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


_REFLEX_OFFSET = 0.4


def gen_quad_convex_concave(n, perturbation=0.0, seed=0, concave=True, max_draws=20):
    """Structured n x n quadrilateral mesh of the unit square.

    In each 2x2 macro-block the shared central vertex is pulled along the
    diagonal into the lower-left cell, to the point ``0.4 / n`` (per
    coordinate) from that cell's outer corner.  This puts a reflex angle in
    the lower-left cell while the other three stay convex.  Interior vertices
    are then perturbed uniformly by up to ``perturbation / n`` per coordinate.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not 0.0 <= perturbation < 0.5:
        raise ValueError("perturbation must lie in [0, 0.5)")
    base = _structured_grid(n)
    idx = lambda i, j: j * (n + 1) + i  # noqa: E731
    if concave:
        for bi in range(1, n, 2):
            for bj in range(1, n, 2):
                base[idx(bi, bj)] = base[idx(bi - 1, bj - 1)] + _REFLEX_OFFSET / n
    cells = [[idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)] for j in range(n) for i in range(n)]
    flags = _unit_square_boundary(_structured_grid(n))
    interior = ~flags
    rng = np.random.default_rng(seed)
    last = None
    for _ in range(max_draws):
        v = base.copy()
        if perturbation > 0:
            v[interior] += rng.uniform(-perturbation / n, perturbation / n, size=(interior.sum(), 2))
        try:
            return validate_mesh(Mesh(v, cells, flags, name=f"quadcc_{n}"))
        except ValidationError as exc:
            last = exc
    raise GenerationError(f"no valid perturbed mesh after {max_draws} draws: {last}")


def gen_triangle(n):
    """Structured triangulation of the unit square with alternating diagonals (2 n^2 cells)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    v = _structured_grid(n)
    idx = lambda i, j: j * (n + 1) + i  # noqa: E731
    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            if (i + j) % 2 == 0:
                cells += [[a, b, c], [a, c, d]]
            else:
                cells += [[a, b, d], [b, c, d]]
    return validate_mesh(Mesh(v, cells, _unit_square_boundary(v), name=f"tri_{n}"))


def build_dof_map(mesh):
    free = ~mesh.boundary_vertex_flags
    v2d = np.full(mesh.n_vertices, -1, dtype=np.int64)
    v2d[free] = np.arange(int(free.sum()))
    return DofMap(v2d, int(free.sum()))
