import numpy as np
import pytest

from _helpers import random_polygon
from navem_lab.errors import UnsupportedOrder
from navem_lab.geometry import Polygon
from navem_lab.quadrature import (
    alg1_points,
    edge_points_exponential,
    gauss_triangle,
    polygon_gauss,
    polygon_sample_points,
    sub_triangulate,
)
from math import factorial


def test_alg1_count():
    for n in range(31):
        assert len(alg1_points(n)) == (n + 1) * (n + 2) // 2


def test_alg1_single_point():
    # x0 = y0 = z0 = 1/3, z = 1 - cos(pi/6), s = (1 - z) / (1 - 1/3)
    expected = np.cos(np.pi / 6) / 2
    assert np.allclose(alg1_points(0, 1e-12), [[expected, expected]], atol=1e-12)
    assert expected == pytest.approx(0.4330127, abs=1e-7)


def test_alg1_points_strictly_interior():
    for n in (1, 5, 13, 30):
        p = alg1_points(n)
        assert np.all(p > 0) and np.all(p.sum(axis=1) < 1)


def test_alg1_rejects_negative():
    with pytest.raises(ValueError):
        alg1_points(-1)


def _monomial_integral(a, b):
    # integral of x^a y^b over the reference triangle
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("order", [2, 4, 6])
def test_triangle_rules_exact(order):
    rule = gauss_triangle(order)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            got = np.sum(rule.weights * rule.points[:, 0] ** a * rule.points[:, 1] ** b)
            assert got == pytest.approx(_monomial_integral(a, b), abs=1e-15)


def test_unsupported_order():
    with pytest.raises(UnsupportedOrder):
        gauss_triangle(5)


def test_polygon_gauss_integrates_quadratics():
    rng = np.random.default_rng(0)
    for kind in ("concave_quad", "heptagon"):
        p = random_polygon(kind, rng)
        rule = polygon_gauss(p, 4)
        assert rule.weights.sum() == pytest.approx(p.area, rel=1e-13)
        # divergence theorem: integral of x^2 = boundary integral of x^3/3 n_x
        v = p.vertices
        w = np.roll(v, -1, axis=0)
        exact = np.sum((w[:, 1] - v[:, 1]) * (v[:, 0] ** 3 + v[:, 0] ** 2 * w[:, 0] + v[:, 0] * w[:, 0] ** 2
                                              + w[:, 0] ** 3) / 12)
        assert np.sum(rule.weights * rule.points[:, 0] ** 2) == pytest.approx(exact, rel=1e-12)


def test_sub_triangulation_covers_area():
    p = Polygon([[0, 0], [2, 0], [2, 0.2], [0.2, 0.2], [0.2, 2], [0, 2]])
    sub = sub_triangulate(p)
    assert np.all(sub.areas > 0)
    assert sub.areas.sum() == pytest.approx(p.area)


def test_sampling_rule_weights():
    p = Polygon([[0, 0], [1, 0], [1, 1], [0, 1]])
    q = polygon_sample_points(p, 10, with_weights=True)
    assert len(q) == 4 * 66
    assert q.weights.sum() == pytest.approx(1.0)
    assert np.all(p.contains(q.points))


def test_edge_rule():
    p = Polygon([[0, 0], [3, 0], [0, 4]])
    q = edge_points_exponential(p, 1, 50)
    assert len(q) == 50
    assert q.weights.sum() == pytest.approx(5.0)
    t = (q.points - [3, 0]) @ np.array([-3, 4]) / 25
    assert np.all(np.diff(t) > 0) and t[0] > 0 and t[-1] < 1
    # clustering: gaps near the vertices are far smaller than the central one
    gaps = np.diff(t)
    assert gaps[:5].max() < 0.2 * gaps[24]
    assert t[0] < 0.01
    assert np.allclose(t, 1 - t[::-1])
    with pytest.raises(ValueError):
        edge_points_exponential(p, 0, 7)
