import math

import numpy as np
import pytest
from scipy.optimize import fsolve

from regulab.catalog import cubic, half_line_cone, identity, linearization_cases, perturbed_cases, sines
from regulab.functions import Affine, linear, scalar_poly, zero_function
from regulab.moduli import ModulusQuery, PreconditionError
from regulab.perturbation import (
    ContractionConfig,
    ContractionViolated,
    PerturbationInstance,
    check_strict_approximation,
    contraction_fixed_point,
    linearization_equivalence,
    perturbed_solve,
    verify_lyusternik_graves,
)

Q1 = ModulusQuery(1.0, [0.0], [0.0], 0.5, resolution=11)


def test_unperturbed_identity():
    r = verify_lyusternik_graves(PerturbationInstance(identity(), zero_function(1, 1), [0.0], [0.0]), Q1)
    assert (r.rg_F, r.lip_f, r.rg_Fplusf) == pytest.approx((1.0, 0.0, 1.0))
    assert r.passed and not r.vacuous


def test_linear_perturbation_is_sharp():
    r = verify_lyusternik_graves(PerturbationInstance(identity(), linear([[-0.3]]), [0.0], [0.0]), Q1)
    assert r.rg_Fplusf == pytest.approx(0.7, abs=1e-9)
    assert r.margin == pytest.approx(0.0, abs=1e-9)


def test_large_perturbation_is_vacuous_not_failed():
    inst = PerturbationInstance(cubic(), scalar_poly([0, 0, 0, 0.1]), [0.0], [0.0], 1 / 3)
    r = verify_lyusternik_graves(inst, ModulusQuery(1 / 3, [0.0], [0.0], 0.5, resolution=11))
    assert r.vacuous and r.passed
    assert r.rg_Fplusf > r.rg_F  # 1.1^(1/3) times larger
    assert r.to_row("c")["vacuous_flag"] is True


def test_instance_invariants():
    with pytest.raises(PreconditionError):
        PerturbationInstance(identity(), scalar_poly([1.0]), [0.0], [0.0])
    with pytest.raises(PreconditionError):
        PerturbationInstance(identity(), zero_function(1, 1), [0.0], [1.0])


def test_linear_contraction_halves():
    r = contraction_fixed_point(lambda u: 0.5 * u, [1.0], ContractionConfig(0.5, 3.0, 1e-12))
    assert r.converged and abs(r.xhat[0]) <= 1e-11
    assert r.residuals[1] == pytest.approx(r.residuals[0] / 2)
    assert r.dominated(0.5) and r.in_ball


def test_cosine_fixed_point():
    # oracle: a long plain iteration in double precision
    x = 1.0
    for _ in range(2000):
        x = math.cos(x)
    r = contraction_fixed_point(np.cos, [1.0], ContractionConfig(0.85, 4.0, 1e-12))
    assert abs(r.xhat[0] - 0.7390851332151607) <= 1e-8 and abs(r.xhat[0] - x) <= 1e-8
    assert r.dominated(0.85)


def test_expansion_is_detected():
    with pytest.raises(ContractionViolated) as err:
        contraction_fixed_point(lambda u: 2 * u, [1.0], ContractionConfig(0.5, 3.0))
    assert len(err.value.triple) == 3


def test_first_step_must_fit_the_ball():
    with pytest.raises(PreconditionError):
        contraction_fixed_point(lambda u: u + 1, [0.0], ContractionConfig(0.5, 1.0))


def test_iteration_budget_returns_partial_trace():
    r = contraction_fixed_point(np.cos, [1.0], ContractionConfig(0.85, 4.0, 1e-14, max_iter=3))
    assert not r.converged and r.iterations == 3


@pytest.mark.parametrize("case", perturbed_cases(), ids=lambda c: c.name)
def test_perturbed_solve_passes_independent_check(case):
    s = perturbed_solve(case.F, case.f, case.y, case.x0, ContractionConfig(case.theta, case.delta, 1e-12))
    assert s.verified and s.residual <= 1e-8


def test_perturbed_solutions_match_oracles():
    lin, trig, cone = perturbed_cases()
    cfg = lambda c: ContractionConfig(c.theta, c.delta, 1e-12)
    assert perturbed_solve(lin.F, lin.f, lin.y, lin.x0, cfg(lin)).xhat[0] == pytest.approx(0.5, abs=1e-10)
    ref = fsolve(lambda x: np.diag([2.0, 1.0]) @ x + 0.1 * np.sin(x) - 1.0, np.zeros(2), xtol=1e-14)
    assert np.allclose(perturbed_solve(trig.F, trig.f, trig.y, trig.x0, cfg(trig)).xhat, ref, atol=1e-9)
    assert perturbed_solve(cone.F, cone.f, cone.y, cone.x0, cfg(cone)).xhat[0] == 0.0


def test_strict_approximation():
    same = check_strict_approximation(scalar_poly([0, 1]), scalar_poly([0, 1]), [0.0])
    assert same.is_strict and max(same.lip_diff) == 0.0
    sq = check_strict_approximation(scalar_poly([0, 0, 1]), zero_function(1, 1), [0.0])
    assert sq.is_strict
    assert sq.lip_diff == pytest.approx([2 * r for r in sq.radii], rel=0.03)
    lin = check_strict_approximation(scalar_poly([0, 1]), zero_function(1, 1), [0.0])
    assert not lin.is_strict and lin.lip_diff[-1] == pytest.approx(1.0)


def test_linearization_of_affine_is_exact():
    f = Affine([[1.5]], [0.0])
    rep = linearization_equivalence(identity(), f, [0.0], [0.0], ModulusQuery(1.0, [0.0], [0.0], 0.4, resolution=11))
    assert max(rep.gaps) <= 1e-12 and rep.passed


@pytest.mark.parametrize("case", linearization_cases(), ids=lambda c: c[0])
def test_linearization_cases(case):
    name, F, f, xbar, ybar, delta = case
    rep = linearization_equivalence(F, f, xbar, ybar, ModulusQuery(1.0, xbar, ybar, delta, resolution=11))
    assert rep.passed
    assert rep.gaps[-1] < rep.gaps[0]
