"""Training datasets of polygons, stored with the mesh JSON cell schema."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from navem_lab.errors import InvalidPolygon
from navem_lab.geometry import Polygon, normalize
from navem_lab.mesh import Mesh, load_mesh, mesh_to_json


def _parse_convexity(convexity):
    if isinstance(convexity, bool):
        return convexity
    if convexity in ("convex", "concave"):
        return convexity == "convex"
    raise ValueError(f"convexity must be 'convex' or 'concave', got {convexity!r}")


def dataset_random_quads(count, convexity="convex", seed=0, min_edge_ratio=0.05):
    """Rejection-sampled quadrilaterals of one convexity, normalized.

    Vertices sit at jittered quarter-turn angles and random radii about the
    origin, so every draw is star-shaped; draws of the wrong convexity or
    with an edge shorter than ``min_edge_ratio * diameter`` are rejected.
    """
    want_convex = _parse_convexity(convexity)
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        angles = rng.uniform(0.0, 2.0 * np.pi) + 0.5 * np.pi * (np.arange(4) + rng.uniform(-0.35, 0.35, 4))
        radii = rng.uniform(0.25, 1.0, 4)
        v = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
        p = Polygon(v, validate=False)
        if p.is_convex != want_convex or p.edge_lengths.min() <= min_edge_ratio * p.diameter:
            continue
        if not want_convex and np.any(np.abs(p.interior_angles - np.pi) < 1e-3):
            continue  # nearly straight angles belong to the hanging-node family
        try:
            out.append(Polygon(normalize(Polygon(v))[0].vertices))
        except InvalidPolygon:
            continue
    return out


def dataset_from_meshes(meshes, polygon_class):
    """All cells of ``polygon_class`` found in ``meshes``."""
    return [p for m in meshes for p in m.polygons if p.class_tag == polygon_class]


def save_dataset(polygons, path):
    verts, cells, k = [], [], 0
    for p in polygons:
        verts.append(p.vertices)
        cells.append(list(range(k, k + p.nv)))
        k += p.nv
    v = np.vstack(verts)
    mesh = Mesh(v, cells, np.ones(len(v), dtype=bool), name=Path(path).stem)
    Path(path).write_text(mesh_to_json(mesh))


def load_dataset(path):
    return list(load_mesh(path).polygons)

