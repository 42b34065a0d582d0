"""Compare the compiled and pure-numpy geometry-jet kernels.

Times ``polygon_jets`` (bubble and transfinite jets up to second order) on
the training sample points of random polygons and checks that both
backends agree.  Run: ``python3 benchmarks/bench_kernels.py``.
"""

import argparse
import timeit

import numpy as np

from navem_lab.basis.datasets import dataset_random_quads
from navem_lab.geometry import EPS_SING, Polygon
from navem_lab.kernels import available_backends
from navem_lab.quadrature import polygon_sample_points


def regular_polygon(nv):
    t = 2 * np.pi * np.arange(nv) / nv
    return Polygon(np.c_[np.cos(t), np.sin(t)])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--alg1-n", type=int, default=10)
    args = ap.parse_args()
    backends = available_backends()
    cases = [("quad convex", dataset_random_quads(1, "convex", seed=0)[0]),
             ("quad concave", dataset_random_quads(1, "concave", seed=0)[0]),
             ("hexagon", regular_polygon(6))]
    print(f"backends: {', '.join(backends)}")
    print(f"{'case':<14}{'points':>8}" + "".join(f"{name + ' ms':>14}" for name in backends) + f"{'speedup':>10}{'max diff':>12}")
    for label, poly in cases:
        v = np.ascontiguousarray(poly.vertices)
        pts = np.ascontiguousarray(polygon_sample_points(poly, args.alg1_n))
        times, outs = {}, {}
        for name, mod in backends.items():
            outs[name] = mod.polygon_jets(v, pts, 2, EPS_SING)
            times[name] = min(timeit.repeat(lambda m=mod: m.polygon_jets(v, pts, 2, EPS_SING),
                                            number=10, repeat=args.repeat)) / 10 * 1e3
        diff = 0.0
        if "cython" in outs:
            diff = max(np.abs(outs["cython"][0] - outs["python"][0]).max(),
                       np.abs(outs["cython"][1] - outs["python"][1]).max())
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<14}{len(pts):>8}" + "".join(f"{times[n]:>14.3f}" for n in backends)
              + f"{speed:>10.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
