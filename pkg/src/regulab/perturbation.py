"""Additive single-valued perturbations of set-valued maps.

Three tools live here. :func:`verify_lyusternik_graves` compares grid
estimates of ``rg^q F``, ``lip^q f`` and ``rg^q (F + f)``. :func:`perturbed_solve`
constructs a solution of ``y in F(x) + f(x)`` by iterating a nearest-point
selection of ``u -> F^{-1}(y - f(u))``. The strict-approximation and
linearization checks compare moduli on a shrinking sequence of radii.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .functions import CallableFunction, Function, affine_model
from .geometry import INF, as_vector, ext_sub
from .mappings import EvalRegion, SetValuedMap, image_distance, sum_with_function
from .moduli import (
    SEARCH_FACTOR,
    ModulusQuery,
    PreconditionError,
    estimate_lip_q_function,
    estimate_rg_q,
)

#: levels of the halving radius sequence used by the germ comparisons
GERM_LEVELS = 5
LG_TOLERANCE = 0.05


class ContractionViolated(RuntimeError):
    """The iterated map expanded on three consecutive steps."""

    def __init__(self, message: str, triple: tuple):
        super().__init__(message)
        self.triple = triple


class EmptyPreimageError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


def _as_function(f, n: int) -> Function:
    if isinstance(f, Function):
        return f
    m = np.atleast_1d(np.asarray(f(np.zeros(n)), dtype=float)).size
    return CallableFunction(f, n, m)


@dataclass(frozen=True)
class PerturbationInstance:
    F: SetValuedMap
    f: Function
    xbar: np.ndarray
    ybar: np.ndarray
    q: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "xbar", as_vector(self.xbar, "xbar"))
        object.__setattr__(self, "ybar", as_vector(self.ybar, "ybar"))
        object.__setattr__(self, "f", _as_function(self.f, self.xbar.size))
        if not 0 < self.q <= 1:
            raise ValueError(f"order q must lie in (0, 1], got {self.q}")
        fx = np.linalg.norm(self.f(self.xbar))
        if fx > 1e-12:
            raise PreconditionError(f"perturbation must vanish at xbar, |f(xbar)| = {fx:.3g}")
        r = image_distance(self.F, self.xbar, self.ybar)
        if r > 1e-9:
            raise PreconditionError(f"base point is not on the graph (residual {r:.3g})")


@dataclass
class LGReport:
    rg_F: float
    lip_f: float
    rg_Fplusf: float
    margin: float
    passed: bool
    vacuous: bool
    capped: dict = field(default_factory=dict)

    def to_row(self, instance_id: str) -> dict:
        return {
            "instance_id": instance_id,
            "rg_F": self.rg_F,
            "lip_f": self.lip_f,
            "rg_Fplusf": self.rg_Fplusf,
            "margin": self.margin,
            "pass": self.passed,
            "vacuous_flag": self.vacuous,
        }


def verify_lyusternik_graves(inst: PerturbationInstance, est: ModulusQuery,
                             tol: float = LG_TOLERANCE) -> LGReport:
    """Check ``rg^q (F + f) >= rg^q F - lip^q f`` on grid estimates.

    A capped regularity estimate (no admissible pair on the grid) is read as
    ``+inf`` for the margin, with ``inf - inf = 0``. When ``lip_f >= rg_F``
    the inequality says nothing and the instance passes as vacuous.
    """
    est = replace(est, q=inst.q, xbar=inst.xbar, ybar=inst.ybar)
    a = estimate_rg_q(inst.F, est)
    b = estimate_rg_q(sum_with_function(inst.F, inst.f), est)
    lip = estimate_lip_q_function(inst.f, inst.xbar, inst.q, est.delta,
                                  resolution=est.resolutions()[-1])
    rg_F = INF if a.capped else a.tau_hat
    rg_Ff = INF if b.capped else b.tau_hat
    lip_f = lip.tau_hat
    vacuous = bool(lip_f >= rg_F)
    if vacuous:
        margin = INF if rg_F != INF else 0.0
    else:
        margin = ext_sub(rg_Ff, rg_F) + lip_f
    passed = vacuous or margin >= -tol
    return LGReport(a.tau_hat, lip_f, b.tau_hat, float(margin), bool(passed), vacuous,
                    {"rg_F": a.capped, "rg_Fplusf": b.capped})


@dataclass(frozen=True)
class ContractionConfig:
    theta: float
    delta: float
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class FixedPointResult:
    xhat: np.ndarray
    iterations: int
    residuals: list
    iterates: list
    converged: bool
    in_ball: bool

    def dominated(self, theta: float, slack: float = 0.01) -> bool:
        """``r_k <= theta^k r_0 (1 + slack)`` along the recorded residuals."""
        r0 = self.residuals[0]
        return all(r <= theta**k * r0 * (1 + slack) + 1e-15
                   for k, r in enumerate(self.residuals))


def contraction_fixed_point(Phi: Callable, x0, cfg: ContractionConfig) -> FixedPointResult:
    """Iterate a single-valued selection ``Phi`` until ``|x - Phi(x)| <= tol``.

    Raises :class:`PreconditionError` when the first step is too long for
    the ball ``B_delta(x0)``, and :class:`ContractionViolated` when the step
    length grows three times in a row. Running out of iterations is not an
    error; the partial result comes back with ``converged=False``.
    """
    x = as_vector(x0, "x0")
    start = x.copy()
    nxt = as_vector(Phi(x), "Phi(x0)")
    r = float(np.linalg.norm(nxt - x))
    if not r < cfg.delta * (1 - cfg.theta):
        raise PreconditionError(
            f"first step {r:.3g} is not below delta*(1-theta) = {cfg.delta * (1 - cfg.theta):.3g}"
        )
    residuals = [r]
    iterates = [x.copy()]
    growth = 0
    for k in range(int(cfg.max_iter)):
        if r <= cfg.tol:
            break
        prev, x = x, nxt
        nxt = as_vector(Phi(x), "Phi(x)")
        r_new = float(np.linalg.norm(nxt - x))
        growth = growth + 1 if r_new > r else 0
        residuals.append(r_new)
        iterates.append(x.copy())
        if growth >= 3:
            raise ContractionViolated(
                f"step length grew three times in a row (last {r_new:.3g})",
                (prev.copy(), x.copy(), nxt.copy()),
            )
        r = r_new
    converged = r <= cfg.tol
    in_ball = bool(np.linalg.norm(x - start) <= cfg.delta * (1 + 1e-12))
    return FixedPointResult(x, len(residuals) - 1, residuals, iterates, bool(converged), in_ball)


@dataclass
class PerturbedSolution:
    xhat: np.ndarray
    trace: FixedPointResult
    residual: float
    verified: bool


def perturbed_solve(F: SetValuedMap, f, y, x0, cfg: ContractionConfig,
                    check_tol: Optional[float] = None) -> PerturbedSolution:
    """Solve ``y in F(x) + f(x)`` by the nearest-point iteration ``u -> F^{-1}(y - f(u))``.

    The returned ``residual`` is recomputed from scratch as ``d(y, F(xhat) +
    f(xhat))`` and ``verified`` compares it with ``check_tol`` (defaults to
    ``max(cfg.tol, 1e-8)``).
    """
    x0 = as_vector(x0, "x0")
    y = as_vector(y, "y")
    f = _as_function(f, x0.size)
    region = EvalRegion(x0, y, SEARCH_FACTOR * cfg.delta, cfg.delta, 41)
    calls = [0]

    def Phi(u):
        p = F.preimage_nearest(u, y - f(u), region)
        if p is None:
            raise EmptyPreimageError(f"F^-1(y - f(u)) is empty at iterate {calls[0]}", calls[0])
        calls[0] += 1
        return p

    trace = contraction_fixed_point(Phi, x0, cfg)
    residual = image_distance(sum_with_function(F, f), trace.xhat, y)
    tol = max(cfg.tol, 1e-8) if check_tol is None else check_tol
    return PerturbedSolution(trace.xhat, trace, float(residual), bool(residual <= tol))


def halving_radii(delta: float, levels: int = GERM_LEVELS) -> list[float]:
    return [float(delta) * 2.0**-k for k in range(levels)]


def _nonincreasing(seq, slack: float = 1e-9) -> bool:
    return all(b <= a + slack for a, b in zip(seq, seq[1:]))


@dataclass
class StrictApproximation:
    radii: list
    lip_diff: list
    is_strict: bool


def check_strict_approximation(f, g, xbar, q: float = 1.0, delta: float = 0.1,
                               resolution: int = 41) -> StrictApproximation:
    """Is ``g`` a strict order-``q`` approximation of ``f`` at ``xbar``?

    Estimates ``lip^q (f - g)`` on balls of radius ``delta * 2^-k``; strict
    means the values do not increase and the last one is at most 0.02.
    """
    xbar = as_vector(xbar, "xbar")
    f = _as_function(f, xbar.size)
    g = _as_function(g, xbar.size)
    gap = np.linalg.norm(f(xbar) - g(xbar))
    if gap > 1e-12:
        raise PreconditionError(f"f and g differ at xbar by {gap:.3g}")
    h = f - g
    radii = halving_radii(delta)
    vals = [estimate_lip_q_function(h, xbar, q, r, resolution).tau_hat for r in radii]
    return StrictApproximation(radii, vals, bool(_nonincreasing(vals) and vals[-1] <= 0.02))


@dataclass
class LinearizationReport:
    radii: list
    rg_nonlinear: list
    rg_linearized: list
    gaps: list
    passed: bool


def linearization_equivalence(F: SetValuedMap, f, xbar, ybar, est: ModulusQuery,
                              q: float = 1.0, agreement: float = 0.10) -> LinearizationReport:
    """Compare ``rg^q (F + f)`` with ``rg^q (F + g)`` for the affine model ``g`` of ``f``.

    Both are estimated at each radius of the halving sequence started at
    ``est.delta``. Passes when the relative gap at the smallest radius is
    within ``agreement`` and the gaps do not grow as the radius shrinks.
    """
    xbar = as_vector(xbar, "xbar")
    ybar = as_vector(ybar, "ybar")
    f = _as_function(f, xbar.size)
    g = affine_model(f, xbar)
    G1 = sum_with_function(F, f)
    G2 = sum_with_function(F, g)
    radii = halving_radii(est.delta)
    a_vals, b_vals, gaps = [], [], []
    for r in radii:
        qr = replace(est, q=q, xbar=xbar, ybar=ybar, delta=r, mu=None)
        a = estimate_rg_q(G1, qr).tau_hat
        b = estimate_rg_q(G2, qr).tau_hat
        a_vals.append(a)
        b_vals.append(b)
        gaps.append(abs(a - b) / max(abs(b), 1e-12))
    passed = gaps[-1] <= agreement and _nonincreasing(gaps, 1e-6)
    return LinearizationReport(radii, a_vals, b_vals, gaps, bool(passed))
