import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regulab.geometry import (
    INF,
    DimensionError,
    EmptySetError,
    Polyhedron,
    dual_product_norm,
    excess,
    ext_from_json,
    ext_sub,
    ext_to_json,
    point_set_distance,
    polyhedron_distance,
    product_distance,
    project_polyhedron,
)


def test_product_distance_takes_the_larger_component():
    assert product_distance(([0, 0], [0]), ([3, 4], [1]), gamma=2.0) == 5.0
    assert product_distance(([0], [0]), ([1], [3]), gamma=2.0) == 6.0


def test_product_distance_rejects_mismatched_pairs():
    with pytest.raises(DimensionError):
        product_distance(([0, 0], [0]), ([0], [0]))


def test_gamma_must_be_positive():
    with pytest.raises(ValueError):
        product_distance(([0], [0]), ([1], [1]), gamma=0.0)
    with pytest.raises(ValueError):
        dual_product_norm([1], [1], gamma=-1)


def test_dual_norm_value():
    # |(3,4)| + |(0,2)| / 4
    assert dual_product_norm([3, 4], [0, 2], gamma=4.0) == pytest.approx(5.5)


@pytest.mark.parametrize(
    "A, b, x, expected",
    [
        ([[1.0, 1.0]], [0.0], [1.0, 1.0], [0.0, 0.0]),
        (None, None, [2.0, -1.0], [1.0, 0.0]),
        ([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], [1.0, 2.0], [0.0, 0.0]),
        ([[1.0, 0.0]], [5.0], [1.0, 2.0], [1.0, 2.0]),
    ],
)
def test_projection_examples(A, b, x, expected):
    P = Polyhedron.box([0, 0], [1, 1]) if A is None else Polyhedron(A, b)
    assert np.allclose(project_polyhedron(P, x), expected, atol=1e-12)


def test_empty_polyhedron():
    P = Polyhedron([[1.0], [-1.0]], [0.0, -1.0])  # x <= 0 and x >= 1
    assert P.is_empty()
    with pytest.raises(EmptySetError):
        project_polyhedron(P, [3.0])
    assert polyhedron_distance(P, [3.0]) == INF


def test_excess_conventions():
    d = point_set_distance([1.0])
    assert excess([[0.0], [3.0]], d) == 2.0
    assert excess([], d) == 0.0
    assert excess([[0.0]], d, B_empty=True) == INF


def test_extended_arithmetic_and_json():
    assert ext_sub(INF, INF) == 0.0
    assert ext_sub(INF, 1.0) == INF
    assert ext_to_json({"a": [INF, 1.0, -INF]}) == {"a": ["inf", 1.0, "-inf"]}
    assert ext_from_json("inf") == INF and ext_from_json(2) == 2.0


coords = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(coords, min_size=2, max_size=2), st.lists(coords, min_size=2, max_size=2),
       st.integers(0, 2**31 - 1))
def test_projection_is_the_nearest_feasible_point(x, c, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 2))
    b = A @ np.asarray(c) + rng.uniform(0, 1, size=4)  # c is feasible
    P = Polyhedron(A, b)
    p = project_polyhedron(P, x)
    assert P.contains(p, 1e-7)
    # variational inequality: <x - p, u - p> <= 0 for feasible u
    for u in rng.normal(size=(50, 2)) * 3 + c:
        if P.contains(u):
            assert np.dot(np.asarray(x) - p, u - p) <= 1e-7 * (1 + np.linalg.norm(u - p))
    assert np.allclose(project_polyhedron(P, p), p, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(*[st.lists(coords, min_size=3, max_size=3) for _ in range(3)], st.floats(0.1, 10))
def test_product_distance_is_a_metric(a, b, c, gamma):
    P = (a[:2], a[2:])
    Q = (b[:2], b[2:])
    R = (c[:2], c[2:])
    assert product_distance(P, Q, gamma) == product_distance(Q, P, gamma)
    assert product_distance(P, R, gamma) <= product_distance(P, Q, gamma) + product_distance(Q, R, gamma) + 1e-9
    assert product_distance(P, P, gamma) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(coords, min_size=3, max_size=3), st.lists(coords, min_size=3, max_size=3),
       st.floats(0.1, 10))
def test_dual_norm_bounds_pairing(xs, u, gamma):
    # |<x*, u> + <y*, v>| <= dual(x*, y*) * max(|u|, gamma |v|)
    xs, u = np.asarray(xs), np.asarray(u)
    x_, y_ = xs[:2], xs[2:]
    u_, v_ = u[:2], u[2:]
    lhs = abs(x_ @ u_ + y_ @ v_)
    rhs = dual_product_norm(x_, y_, gamma) * max(np.linalg.norm(u_), gamma * np.linalg.norm(v_))
    assert lhs <= rhs + 1e-9
