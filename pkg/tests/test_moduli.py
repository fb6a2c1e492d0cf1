import numpy as np
import pytest

from regulab.functions import Term, TermFunction, linear, scalar_poly
from regulab.mappings import EvalRegion, LinearMap, SampledGraph, Smooth, graph_sample
from regulab.moduli import (
    CAP_VALUE,
    ModulusQuery,
    PreconditionError,
    check_inverse_duality,
    estimate_lip_q,
    estimate_lip_q_function,
    estimate_rg_q,
)

CUBE = Smooth(scalar_poly([0, 0, 0, 1]))
QUARTER = 4.0 ** (-1 / 3)


def q1(F, n=1, **kw):
    return ModulusQuery(1.0, np.zeros(n), np.zeros(n), 0.5, **kw)


def test_identity_modulus():
    est = estimate_rg_q(LinearMap([[1.0]]), q1(None))
    assert est.tau_hat == pytest.approx(1.0, abs=1e-9)
    # nested grids make the trace nonincreasing
    vals = [v for _, v in est.trace]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_diagonal_modulus_is_smallest_singular_value():
    sigma = np.linalg.svd(np.diag([2.0, 1.0]), compute_uv=False).min()
    est = estimate_rg_q(LinearMap(np.diag([2.0, 1.0])), q1(None, 2, resolution=11))
    assert est.tau_hat == pytest.approx(sigma, rel=0.05)


def test_cubic_holder_modulus():
    est = estimate_rg_q(CUBE, ModulusQuery(1 / 3, [0.0], [0.0], 0.5))
    assert abs(est.tau_hat - QUARTER) <= 0.03


def test_off_graph_base_point_is_rejected():
    with pytest.raises(PreconditionError):
        estimate_rg_q(LinearMap([[1.0]]), ModulusQuery(1.0, [0.0], [1.0], 0.5))


def test_no_admissible_pair_caps_the_estimate():
    # a residual cap smaller than any off-graph residual on the grid leaves nothing
    est = estimate_rg_q(LinearMap([[1.0]]), q1(None, residual_cap=1e-12, refinement_levels=1))
    assert est.capped and est.tau_hat == CAP_VALUE


def test_holder_modulus_of_square_root():
    F = Smooth(TermFunction(1, ((Term(1.0, fn="sqrt_abs", var=0),),)))
    est = estimate_lip_q(F, ModulusQuery(2.0, [0.0], [0.0], 0.5, resolution=11, refinement_levels=2))
    assert est.tau_hat == pytest.approx(1.0, abs=0.02)


def test_holder_modulus_of_sampled_cube_root():
    pairs = graph_sample(CUBE, EvalRegion([0.0], [0.0], 0.5, 0.5, 81))
    inv = SampledGraph.from_pairs([(y, x) for x, y in pairs])
    est = estimate_lip_q(inv, ModulusQuery(3.0, [0.0], [0.0], 0.5, resolution=11, refinement_levels=1))
    assert est.tau_hat == pytest.approx(4.0, rel=0.10)


@pytest.mark.parametrize("f, expected", [
    (scalar_poly([2.0]), 0.0),
    (linear([[-0.3]]), 0.3),
])
def test_function_lipschitz_constants(f, expected):
    assert estimate_lip_q_function(f, [0.0], 1.0, 0.5).tau_hat == pytest.approx(expected, abs=1e-12)


def test_function_lipschitz_of_square_on_small_ball():
    est = estimate_lip_q_function(scalar_poly([0, 0, 1]), [0.0], 1.0, 0.1, resolution=101)
    assert est.tau_hat == pytest.approx(0.2, rel=0.02)


@pytest.mark.parametrize("F, q, rg", [
    (LinearMap([[1.0]]), 1.0, 1.0),
    (LinearMap([[2.0]]), 1.0, 2.0),
    (CUBE, 1 / 3, QUARTER),
])
def test_inverse_duality(F, q, rg):
    rep = check_inverse_duality(F, ModulusQuery(q, [0.0], [0.0], 0.5, resolution=11, refinement_levels=2))
    assert rep.passed
    assert rep.rg_estimate.tau_hat == pytest.approx(rg, abs=0.03)


def test_query_validation():
    with pytest.raises(ValueError):
        ModulusQuery(0.0, [0.0], [0.0], 0.5)
    with pytest.raises(ValueError):
        ModulusQuery(1.0, [0.0], [0.0], 0.5, resolution=3)
    assert ModulusQuery(1.0, [0.0], [0.0], 0.5, resolution=5, refinement_levels=3).resolutions() == [5, 9, 17]
