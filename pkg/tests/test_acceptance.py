"""One test per acceptance criterion, at the stated tolerances."""
import math
import time

import numpy as np
import pytest

from regulab.catalog import (
    CUBE_ROOT_QUARTER,
    cubic,
    identity,
    lg_battery,
    linearization_cases,
    perturbed_cases,
)
from regulab.conditions import (
    CoderivativeConditionQuery,
    EkelandQuery,
    check_coderivative_sufficiency,
    check_slope_sufficiency,
    coderivative_distance,
    ekeland_point,
    linear_graph,
    slope_chain_rule_check,
    verify_ekeland,
)
from regulab.functions import linear, scalar_poly
from regulab.geometry import INF
from regulab.mappings import LinearMap, NormalConeOfBox, ZeroMap
from regulab.moduli import ModulusQuery, check_inverse_duality, estimate_rg_q
from regulab.newton import GeneralizedEquation, NewtonConfig, josephy_newton
from regulab.perturbation import (
    ContractionConfig,
    PerturbationInstance,
    contraction_fixed_point,
    linearization_equivalence,
    perturbed_solve,
    verify_lyusternik_graves,
)


def test_criterion_01_quadratic_convergence():
    root = math.sqrt(2)
    t = josephy_newton(GeneralizedEquation(scalar_poly([-2, 0, 1]), ZeroMap()), NewtonConfig([3.0]),
                       xstar=[root])
    assert abs(t.x[0] - root) <= 1e-12 and len(t.iterates) - 1 <= 7
    assert 1.8 <= t.rate.exponent_hat <= 2.2
    assert abs(t.rate.gamma_hat - 1 / (2 * root)) <= 0.5 / (2 * root)
    ncp_root = (-1 + math.sqrt(13)) / 2
    ncp = GeneralizedEquation(scalar_poly([-3, 1, 1]), NormalConeOfBox([0.0], [INF]))
    t2 = josephy_newton(ncp, NewtonConfig([2.0]), xstar=[ncp_root])
    assert abs(t2.x[0] - ncp_root) <= 1e-12
    assert 1.8 <= t2.rate.exponent_hat <= 2.2


def test_criterion_02_negative_control_degenerate_root():
    ge = GeneralizedEquation(scalar_poly([0, 0, 1]), ZeroMap())
    t = josephy_newton(ge, NewtonConfig([1.0]), xstar=[0.0], monitor=True)
    assert t.regularity["capped"] or t.regularity["tau_hat"] <= 0.05
    assert t.rate.exponent_hat <= 1.2
    assert t.rate.gamma_hat == pytest.approx(0.5, abs=0.05)


def test_criterion_03_holder_lyusternik_graves():
    battery = lg_battery()
    assert len(battery) >= 10
    for name, inst, o in battery:
        q = ModulusQuery(inst.q, inst.xbar, inst.ybar, o["delta"], resolution=o["resolution"],
                         refinement_levels=o["refinement_levels"])
        r = verify_lyusternik_graves(inst, q)
        assert r.passed, name
        if not r.vacuous:
            assert r.margin >= -0.05, name
    for lam in (0.1, 0.3, 0.5):
        inst = PerturbationInstance(identity(), linear([[-lam]]), [0.0], [0.0])
        r = verify_lyusternik_graves(inst, ModulusQuery(1.0, [0.0], [0.0], 0.5, resolution=11))
        assert abs(r.rg_Fplusf - (1 - lam)) <= 0.02


def _well_conditioned(rng, n):
    while True:
        A = rng.normal(size=(n, n))
        if np.linalg.cond(A) < 3:
            return A


def test_criterion_04_modulus_matches_smallest_singular_value():
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    for n, res in [(2, 11)] * 10 + [(3, 5)] * 10:
        A = _well_conditioned(rng, n)
        sigma = np.linalg.svd(A, compute_uv=False).min()
        est = estimate_rg_q(LinearMap(A), ModulusQuery(1.0, np.zeros(n), np.zeros(n), 0.5,
                                                       resolution=res, refinement_levels=3))
        assert abs(est.tau_hat - sigma) <= 0.05 * sigma
    assert time.perf_counter() - start <= 60


def test_criterion_05_cubic_holder_modulus():
    est = estimate_rg_q(cubic(), ModulusQuery(1 / 3, [0.0], [0.0], 0.5))
    assert abs(est.tau_hat - CUBE_ROOT_QUARTER) <= 0.03


@pytest.mark.parametrize("F, q", [(LinearMap([[1.0]]), 1.0), (LinearMap([[2.0]]), 1.0), (cubic(), 1 / 3)],
                         ids=["identity", "scalar", "cubic"])
def test_criterion_06_inverse_duality(F, q):
    rep = check_inverse_duality(F, ModulusQuery(q, [0.0], [0.0], 0.5, resolution=11, refinement_levels=2))
    assert rep.residual <= 0.05 * max(1.0, rep.rg_estimate.tau_hat)


def test_criterion_07_coderivative_machinery():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n, m = rng.integers(1, 4, size=2)
        A = rng.normal(size=(m, n))
        x = rng.normal(size=n)
        ys = rng.normal(size=m)
        d = coderivative_distance(linear_graph(A), x, A @ x, ys)
        assert abs(d - np.linalg.norm(A.T @ ys)) <= 1e-8
    A = np.diag([2.0, 1.0])
    sigma = np.linalg.svd(A, compute_uv=False).min()
    z = np.zeros(2)
    ok = check_coderivative_sufficiency(LinearMap(A), z, z, CoderivativeConditionQuery(1.0, 0.9 * sigma, 0.5, 0.5))
    assert ok.holds_on_samples
    bad = check_coderivative_sufficiency(LinearMap(A), z, z, CoderivativeConditionQuery(1.0, 1.5 * sigma, 0.5, 0.5))
    assert not bad.holds_on_samples and bad.violating_witness is not None


@pytest.mark.parametrize("F, q, true, res", [(identity(), 1.0, 1.0, 11), (cubic(), 1 / 3, CUBE_ROOT_QUARTER, 21)],
                         ids=["identity", "cubic"])
def test_criterion_08_slope_conditions(F, q, true, res):
    ok = check_slope_sufficiency(F, [0.0], [0.0], q, 0.9 * true, 0.5, 0.5, resolution=res)
    assert ok.holds_on_samples
    bad = check_slope_sufficiency(F, [0.0], [0.0], q, 1.5 * true, 0.5, 0.5, resolution=res)
    assert not bad.holds_on_samples and bad.violating_witness is not None


def test_criterion_09_ekeland_certificates():
    rng = np.random.default_rng(9)
    failures = 0
    for _ in range(1000):
        N = int(rng.integers(1, 40))
        P = rng.normal(size=(N, 2))
        D = np.linalg.norm(P[:, None] - P[None, :], axis=2)
        f = rng.normal(size=N)
        eps = float(rng.uniform(0.05, 2.0))
        lam = float(rng.uniform(0.05, 3.0))
        x0 = int(rng.choice(np.flatnonzero(f < f.min() + eps)))
        q = EkelandQuery(D, f, x0, eps, lam)
        cert = ekeland_point(q)
        if not (cert.ok and all(verify_ekeland(q, cert.index))):
            failures += 1
    assert failures == 0


def test_criterion_10_contraction_engine():
    lin = contraction_fixed_point(lambda u: 0.5 * u, [1.0], ContractionConfig(0.5, 3.0, 1e-12))
    cos = contraction_fixed_point(np.cos, [1.0], ContractionConfig(0.85, 4.0, 1e-12))
    assert lin.dominated(0.5, 0.01) and cos.dominated(0.85, 0.01)
    for case in perturbed_cases():
        s = perturbed_solve(case.F, case.f, case.y, case.x0, ContractionConfig(case.theta, case.delta, 1e-12))
        assert s.residual <= 1e-8, case.name


def test_criterion_11_slope_chain_rule():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a, b, c = rng.uniform(0.5, 2.0), rng.uniform(0.1, 1.5), rng.uniform(-1, 1)
        x = rng.uniform(-1, 1, size=2)
        q = float(rng.uniform(0.2, 0.9))
        g = lambda u, a=a, b=b, c=c: a + b * (u[0] ** 2 + u[1] ** 2) + c * math.sin(u[0] + 2 * u[1])
        r = slope_chain_rule_check(g, x, q, (0.01, 0.001))
        assert r.residual <= 0.05 * r.rhs


@pytest.mark.parametrize("case", linearization_cases(), ids=lambda c: c[0])
def test_criterion_12_linearization_equivalence(case):
    name, F, f, xbar, ybar, delta = case
    rep = linearization_equivalence(F, f, xbar, ybar, ModulusQuery(1.0, xbar, ybar, delta, resolution=11))
    assert rep.gaps[-1] <= 0.10
    assert all(b <= a for a, b in zip(rep.gaps, rep.gaps[1:]))
