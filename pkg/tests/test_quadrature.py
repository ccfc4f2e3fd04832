import math

import numpy as np

from mixedwave import quadrature as quad
from mixedwave.mesh import unit_square_mesh


def test_segment_rule_exactness():
    for deg in range(8):
        x, w = quad.segment_rule(deg)
        for p in range(deg + 1):
            exact = 1.0 / (p + 1)
            assert abs((w * x ** p).sum() - exact) < 1e-14


def test_triangle_rule_weight_sum():
    for deg in range(8):
        _, w = quad.triangle_rule(deg)
        assert abs(w.sum() - 0.5) < 1e-14


def test_triangle_rule_monomial_exactness():
    # int over reference triangle of x^a y^b = a! b! / (a + b + 2)!
    for deg in range(7):
        pts, w = quad.triangle_rule(deg)
        for a in range(deg + 1):
            for b in range(deg + 1 - a):
                exact = (
                    math.factorial(a)
                    * math.factorial(b)
                    / math.factorial(a + b + 2)
                )
                got = (w * pts[:, 0] ** a * pts[:, 1] ** b).sum()
                assert abs(got - exact) < 1e-14, (deg, a, b)


def test_map_to_cells_integrates_area_and_linear():
    mesh = unit_square_mesh(3)
    rp, rw = quad.triangle_rule(2)
    pts, w = quad.map_to_cells(mesh, rp, rw)
    assert abs(w.sum() - 1.0) < 1e-13
    # int over unit square of x = 1/2
    assert abs((w * pts[..., 0]).sum() - 0.5) < 1e-13


def test_map_to_edges_lengths():
    mesh = unit_square_mesh(2)
    rp, rw = quad.segment_rule(3)
    pts, w = quad.map_to_edges(mesh, rp, rw)
    assert np.allclose(w.sum(axis=1), mesh.h_edge)
