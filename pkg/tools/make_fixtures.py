"""Regenerate the committed fixture meshes in src/navem_lab/fixtures.

Voronoi meshes: Lloyd-relaxed seeds in the unit square, cells clipped with
shapely, near-coincident vertices merged, and draws rejected until every
cell has at most seven vertices and no very short edge.
"""

import argparse
from pathlib import Path

import numpy as np
from scipy.spatial import Voronoi
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry import box
from shapely.geometry.polygon import orient

from navem_lab.mesh import Mesh, gen_quad_convex_concave, mesh_to_json, validate_mesh

OUT = Path(__file__).resolve().parents[1] / "src" / "navem_lab" / "fixtures"
SQUARE = box(0.0, 0.0, 1.0, 1.0)


def _mirrored(seeds):
    # reflecting across the four sides makes every cell bounded and the boundary cells straight
    x, y = seeds[:, 0], seeds[:, 1]
    return np.vstack([seeds, np.c_[-x, y], np.c_[2 - x, y], np.c_[x, -y], np.c_[x, 2 - y]])


def _cells(seeds):
    vor = Voronoi(_mirrored(seeds))
    polys = []
    for k in range(len(seeds)):
        region = vor.regions[vor.point_region[k]]
        poly = orient(ShapelyPolygon(vor.vertices[region]).intersection(SQUARE), 1.0)
        polys.append(np.asarray(poly.exterior.coords)[:-1])
    return polys


def voronoi_mesh(n_seeds, seed, lloyd=30, max_nv=7, min_edge=0.2, name="voronoi"):
    rng = np.random.default_rng(seed)
    for _ in range(200):
        pts = rng.uniform(0.05, 0.95, (n_seeds, 2))
        for _ in range(lloyd):
            pts = np.array([ShapelyPolygon(c).centroid.coords[0] for c in _cells(pts)])
        cells = _cells(pts)
        verts, index, out = [], {}, []
        for c in cells:
            ring = []
            for p in c:
                key = tuple(np.round(p, 9))
                if key not in index:
                    index[key] = len(verts)
                    verts.append(p)
                if not ring or ring[-1] != index[key]:
                    ring.append(index[key])
            if ring[0] == ring[-1]:
                ring.pop()
            out.append(ring)
        v = np.array(verts)
        ok = all(3 <= len(r) <= max_nv for r in out)
        for r in out:
            e = np.roll(v[r], -1, axis=0) - v[r]
            diam = np.max(np.linalg.norm(v[r][:, None] - v[r][None], axis=-1))
            ok &= np.hypot(*e.T).min() > min_edge * diam / 4
        if not ok:
            continue
        flags = (np.abs(v) < 1e-12).any(axis=1) | (np.abs(v - 1.0) < 1e-12).any(axis=1)
        v[np.abs(v) < 1e-12] = 0.0
        v[np.abs(v - 1.0) < 1e-12] = 1.0
        return validate_mesh(Mesh(v, out, flags, name=name))
    raise RuntimeError("no acceptable Voronoi draw")


def hanging_node_mesh():
    """Unit square: one triangle with a hanging node on its hypotenuse, plus two triangles."""
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], dtype=float)
    cells = [[0, 1, 2, 4], [0, 4, 3], [4, 2, 3]]
    flags = np.array([True, True, True, True, False])
    return validate_mesh(Mesh(v, cells, flags, name="hanging"))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    meshes = {
        "voronoi_1": voronoi_mesh(16, seed=1, name="voronoi_1"),
        "voronoi_2": voronoi_mesh(64, seed=2, name="voronoi_2"),
        "quadcc_coarse": gen_quad_convex_concave(4, 0.2, seed=1),
        "quad_convex_16": gen_quad_convex_concave(4, 0.2, seed=1, concave=False),
        "hanging": hanging_node_mesh(),
    }
    for name, mesh in meshes.items():
        mesh.name = name
        (args.out / f"{name}.json").write_text(mesh_to_json(mesh))
        print(name, mesh.n_vertices, "vertices", mesh.n_cells, "cells", dict(mesh.class_histogram()))


if __name__ == "__main__":
    main()
