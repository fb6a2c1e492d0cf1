"""Randomized properties across modules."""
import numpy as np
from hypothesis import given, settings, strategies as st

from regulab.conditions import EkelandQuery, ekeland_point
from regulab.functions import CallableFunction, linear
from regulab.io import ExperimentInstance, ESTIMATOR_DEFAULTS, parse_instances, serialize_instances
from regulab.mappings import LinearMap, NormalConeOfBox, image_distance
from regulab.moduli import ModulusQuery, estimate_rg_q
from regulab.newton import GeneralizedEquation, solve_subproblem

small = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 5.0), st.booleans())
def test_scalar_linear_modulus_is_the_slope(a, neg):
    a = -a if neg else a
    est = estimate_rg_q(LinearMap([[a]]), ModulusQuery(1.0, [0.0], [0.0], 0.5, resolution=7, refinement_levels=1))
    assert abs(est.tau_hat - abs(a)) <= 1e-9 * abs(a)


@settings(max_examples=30, deadline=None)
@given(st.lists(small, min_size=4, max_size=4), st.lists(small, min_size=2, max_size=2),
       st.lists(st.floats(0.0, 2.0), min_size=2, max_size=2))
def test_instances_round_trip(A, x, width):
    lower = np.array([-1.0, 0.0])
    upper = lower + np.array(width) + 0.1
    for F in (LinearMap(np.reshape(A, (2, 2))), NormalConeOfBox(lower, upper)):
        inst = ExperimentInstance("p", "estimate-rg", F, np.array(x), np.zeros(2), 1.0,
                                  linear(np.eye(2)), dict(ESTIMATOR_DEFAULTS))
        text = serialize_instances([inst])
        assert serialize_instances(parse_instances(text)) == text


@settings(max_examples=40, deadline=None)
@given(st.lists(small, min_size=4, max_size=4), st.lists(small, min_size=2, max_size=2),
       st.lists(small, min_size=2, max_size=2))
def test_box_subproblem_solves_the_linear_complementarity_problem(R, b, xk):
    M = np.reshape(R, (2, 2))
    M = M @ M.T + 0.5 * np.eye(2)  # positive definite: a unique solution exists
    f = CallableFunction(lambda x: M @ x + np.asarray(b), 2, 2, jac=lambda x: M)
    ge = GeneralizedEquation(f, NormalConeOfBox([0.0, 0.0], [np.inf, np.inf]))
    x = solve_subproblem(ge, xk)
    assert image_distance(ge.F, x, -(M @ x + np.asarray(b))) <= 1e-9 * (1 + np.abs(M).max() + np.abs(b).max())


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.floats(0.05, 2.0), st.floats(0.05, 3.0), st.integers(0, 2**32 - 1))
def test_ekeland_points_certify(N, eps, lam, seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(N, 3))
    D = np.linalg.norm(P[:, None] - P[None, :], axis=2)
    f = rng.normal(size=N)
    x0 = int(np.flatnonzero(f < f.min() + eps)[-1])
    assert ekeland_point(EkelandQuery(D, f, x0, eps, lam)).ok
