"""Desk-scale instances with known answers.

The bundled batch files under ``regulab/data`` are produced from these
builders, so tests, demos and the CLI all use the same instances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .functions import Affine, Term, TermFunction, linear, scalar_poly, zero_function
from .io import ExperimentInstance, ESTIMATOR_DEFAULTS, serialize_instances
from .mappings import LinearMap, NormalConeOfBox, Smooth, ZeroMap, SetValuedMap
from .perturbation import PerturbationInstance

CUBE_ROOT_QUARTER = 4.0 ** (-1.0 / 3.0)
HALF_RAY = ([0.0], [math.inf])


def identity(n: int = 1) -> LinearMap:
    return LinearMap(np.eye(n))


def cubic() -> Smooth:
    return Smooth(scalar_poly([0, 0, 0, 1]))


def half_line_cone() -> NormalConeOfBox:
    return NormalConeOfBox(*HALF_RAY)


def sines(n: int, c: float) -> TermFunction:
    return TermFunction(n, tuple((Term(c, fn="sin", var=i),) for i in range(n)))


def lg_battery() -> list[tuple[str, PerturbationInstance, dict]]:
    """Instances for the perturbation inequality; the dict holds estimator overrides."""
    z1, z2 = [0.0], [0.0, 0.0]
    one_d = {"delta": 0.5, "resolution": 11, "refinement_levels": 3}
    two_d = {"delta": 0.5, "resolution": 9, "refinement_levels": 2}
    diag = LinearMap(np.diag([2.0, 1.0]))
    rot = LinearMap(np.array([[1.0, 1.0], [0.0, 1.0]]))
    return [
        ("id-zero", PerturbationInstance(identity(), zero_function(1, 1), z1, z1), one_d),
        ("id-minus-0.1", PerturbationInstance(identity(), linear([[-0.1]]), z1, z1), one_d),
        ("id-minus-0.3", PerturbationInstance(identity(), linear([[-0.3]]), z1, z1), one_d),
        ("id-minus-0.5", PerturbationInstance(identity(), linear([[-0.5]]), z1, z1), one_d),
        ("id-plus-sin", PerturbationInstance(identity(), sines(1, 0.2), z1, z1), one_d),
        ("id-quadratic", PerturbationInstance(identity(), scalar_poly([0, 0, 0.3]), z1, z1), one_d),
        ("cubic-cubic", PerturbationInstance(cubic(), scalar_poly([0, 0, 0, 0.1]), z1, z1, 1 / 3),
         one_d),
        ("cone-linear", PerturbationInstance(half_line_cone(), linear([[0.5]]), z1, z1), one_d),
        ("cone-sin", PerturbationInstance(half_line_cone(), sines(1, 0.3), z1, z1), one_d),
        ("diag-sin", PerturbationInstance(diag, sines(2, 0.1), z2, z2), two_d),
        ("shear-linear", PerturbationInstance(rot, linear([[0.0, -0.2], [0.1, 0.0]]), z2, z2), two_d),
    ]


@dataclass(frozen=True)
class PerturbedCase:
    name: str
    F: SetValuedMap
    f: object
    y: np.ndarray
    x0: np.ndarray
    theta: float
    delta: float


def perturbed_cases() -> list[PerturbedCase]:
    """Three equations ``y in F(x) + f(x)`` for the contraction solver."""
    return [
        PerturbedCase("identity-linear", identity(), linear([[-0.3]]), np.array([0.35]),
                      np.array([0.0]), 0.3, 2.0),
        PerturbedCase("diag-sin", LinearMap(np.diag([2.0, 1.0])), sines(2, 0.1), np.array([1.0, 1.0]),
                      np.zeros(2), 0.1, 3.0),
        PerturbedCase("cone-shift", half_line_cone(), scalar_poly([1, 1]), np.array([0.0]),
                      np.array([0.5]), 0.5, 2.0),
    ]


def linearization_cases() -> list[tuple[str, SetValuedMap, object, np.ndarray, np.ndarray, float]]:
    """(name, F, f, xbar, ybar, delta) for the linearization comparison."""
    xs = -1.0 + math.sqrt(3.0)
    return [
        ("zero-plus-quadratic", ZeroMap(), scalar_poly([0, 1, 1]), np.zeros(1), np.zeros(1), 0.4),
        ("cone-plus-quadratic", half_line_cone(), scalar_poly([-1, 1, 0.5]), np.array([xs]),
         np.zeros(1), 0.4),
    ]


def _inst(iid, task, F, xbar, ybar, q=1.0, f=None, estimator=None, params=None):
    est = {**ESTIMATOR_DEFAULTS, **(estimator or {})}
    return ExperimentInstance(iid, task, F, np.atleast_1d(np.asarray(xbar, dtype=float)),
                              np.atleast_1d(np.asarray(ybar, dtype=float)), float(q), f, est,
                              dict(params or {}))


def cubic_instance() -> ExperimentInstance:
    return _inst("cubic", "estimate-rg", cubic(), [0.0], [0.0], 1 / 3,
                 estimator={"delta": 0.5, "resolution": 21, "refinement_levels": 3},
                 params={"expected": CUBE_ROOT_QUARTER, "tolerance": 0.03})


def sqrt2_instance() -> ExperimentInstance:
    return _inst("sqrt2", "newton", ZeroMap(), [math.sqrt(2.0)], [0.0], f=scalar_poly([-2, 0, 1]),
                 params={"x0": [3.0], "tol": 1e-10, "max_iter": 50})


def complementarity_instance() -> ExperimentInstance:
    xs = (-1.0 + math.sqrt(13.0)) / 2.0
    return _inst("ncp-quadratic", "newton", half_line_cone(), [xs], [0.0],
                 f=scalar_poly([-3, 1, 1]), params={"x0": [2.0], "tol": 1e-10, "max_iter": 50})


def acceptance_batch() -> list[ExperimentInstance]:
    small = {"delta": 0.5, "resolution": 11, "refinement_levels": 2}
    diag = LinearMap(np.diag([2.0, 1.0]))
    out = [
        _inst("rg-identity", "estimate-rg", identity(), [0.0], [0.0], estimator=small,
              params={"expected": 1.0, "tolerance": 0.02}),
        _inst("rg-diag", "estimate-rg", diag, [0.0, 0.0], [0.0, 0.0],
              estimator={"delta": 0.5, "resolution": 11, "refinement_levels": 2},
              params={"expected": 1.0, "tolerance": 0.05}),
        cubic_instance(),
        _inst("lip-sqrt", "estimate-lip", Smooth(TermFunction(1, ((Term(1.0, fn="sqrt_abs", var=0),),))),
              [0.0], [0.0], 2.0, estimator=small, params={"expected": 1.0, "tolerance": 0.05}),
        _inst("duality-scalar", "duality", LinearMap([[2.0]]), [0.0], [0.0], estimator=small),
        _inst("duality-cubic", "duality", cubic(), [0.0], [0.0], 1 / 3, estimator=small),
        _inst("lg-sharp", "verify-lg", identity(), [0.0], [0.0], f=linear([[-0.3]]), estimator=small),
        _inst("lg-diag-sin", "verify-lg", diag, [0.0, 0.0], [0.0, 0.0], f=sines(2, 0.1),
              estimator={"delta": 0.5, "resolution": 7, "refinement_levels": 2}),
        _inst("slope-identity", "check-slope", identity(), [0.0], [0.0], estimator=small,
              params={"tau": 0.9}),
        _inst("slope-cubic-violated", "check-slope", cubic(), [0.0], [0.0], 1 / 3,
              estimator={"delta": 0.5, "resolution": 21, "refinement_levels": 1},
              params={"tau": 1.5 * CUBE_ROOT_QUARTER, "expect": "violated"}),
        _inst("coderivative-diag", "check-coderivative", diag, [0.0, 0.0], [0.0, 0.0],
              estimator={"delta": 0.5}, params={"tau": 0.9}),
        sqrt2_instance(),
        complementarity_instance(),
    ]
    return out


DATA_FILES = {
    "cubic.json": lambda: [cubic_instance()],
    "newton.json": lambda: [sqrt2_instance(), complementarity_instance()],
    "acceptance_batch.json": acceptance_batch,
}


def data_path(name: str):
    """Path of a bundled instance file."""
    return resources.files("regulab") / "data" / name


def write_data(directory) -> None:
    import os

    for name, build in DATA_FILES.items():
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            fh.write(serialize_instances(build()))
