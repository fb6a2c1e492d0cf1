"""Josephy–Newton iteration for generalized equations ``0 in f(x) + F(x)``.

Each step linearizes ``f`` at the current iterate and solves the resulting
affine inclusion exactly:

* ``ZeroMap``: one linear solve (classical Newton);
* ``NormalConeOfBox``: enumeration of the ``3^n`` lower/free/upper patterns;
* ``PolyhedralGraph``: with graph ``{A x + B y <= c}`` the affine inclusion
  reads ``(A - B M) x <= c + B a``, a polyhedron, and the step is the
  projection of the current iterate onto it.

Among several solutions of a subproblem the one nearest the current iterate
is taken (ties broken lexicographically).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .functions import CallableFunction, Function, check_jacobian
from .geometry import EmptySetError, Polyhedron, as_vector, project_polyhedron
from .mappings import (
    NormalConeOfBox,
    PolyhedralGraph,
    SetValuedMap,
    ZeroMap,
    image_distance,
    sum_with_function,
)
from .moduli import ModulusQuery, estimate_rg_q

MAX_BOX_DIM = 8
INCLUSION_TOL = 1e-9
RATE_WINDOW = (1e-14, 1e-1)
MIN_RATE_PAIRS = 3


class SubproblemError(RuntimeError):
    def __init__(self, message: str, log: Optional[list] = None):
        super().__init__(message)
        self.log = log or []


class InsufficientDecayWindow(ValueError):
    """Too few iterates fall in the error window to fit a rate."""


@dataclass(frozen=True)
class GeneralizedEquation:
    """``0 in f(x) + F(x)``; ``J`` defaults to ``f.jacobian``."""

    f: Function
    F: SetValuedMap
    J: Optional[Callable] = None
    check_points: int = 5
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.F, (ZeroMap, NormalConeOfBox, PolyhedralGraph)):
            raise TypeError(
                f"F must be ZeroMap, NormalConeOfBox or PolyhedralGraph, got {type(self.F).__name__}"
            )
        if (self.f.n, self.f.m) != (self.F.n, self.F.m) or self.F.n != self.F.m:
            raise ValueError(
                f"f is {self.f.n}->{self.f.m} but F is {self.F.n}->{self.F.m}; both must be n->n"
            )
        if self.J is None:
            object.__setattr__(self, "J", self.f.jacobian)
        else:
            probe = CallableFunction(self.f, self.f.n, self.f.m, jac=self.J)
            rng = np.random.default_rng(self.seed)
            pts = rng.uniform(-1.0, 1.0, size=(self.check_points, self.n))
            err = check_jacobian(probe, pts)
            if err > 1e-5:
                raise ValueError(f"Jacobian disagrees with finite differences (relative error {err:.2e})")

    @property
    def n(self) -> int:
        return self.F.n

    def jacobian(self, x) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.J(np.asarray(x, dtype=float)), dtype=float))


def residual(ge: GeneralizedEquation, x) -> float:
    """``d(0, f(x) + F(x))``."""
    x = as_vector(x)
    return image_distance(ge.F, x, -ge.f(x))


def _pick(cands: list, xk: np.ndarray) -> np.ndarray:
    return min(cands, key=lambda c: (round(float(np.linalg.norm(c - xk)), 12), tuple(c)))


def _solve_box(F: NormalConeOfBox, M: np.ndarray, a: np.ndarray, xk: np.ndarray) -> np.ndarray:
    n = F.n
    if n > MAX_BOX_DIM:
        raise SubproblemError(f"box dimension {n} exceeds the enumeration limit {MAX_BOX_DIM}")
    cands, log = [], []
    for pattern in itertools.product(("free", "lower", "upper"), repeat=n):
        fixed = np.array([p != "free" for p in pattern])
        x = np.where([p == "lower" for p in pattern], F.lower,
                     np.where([p == "upper" for p in pattern], F.upper, 0.0))
        if not np.all(np.isfinite(x[fixed])):
            continue
        free = ~fixed
        if free.any():
            Mff = M[np.ix_(free, free)]
            rhs = -a[free] - M[np.ix_(free, fixed)] @ x[fixed]
            try:
                x[free] = np.linalg.solve(Mff, rhs)
            except np.linalg.LinAlgError:
                log.append((pattern, "singular"))
                continue
        w = -(M @ x + a)
        if F.image_distances_paired(x[None, :], w[None, :])[0] <= INCLUSION_TOL * (1 + np.abs(w).max()):
            cands.append(x)
            log.append((pattern, "feasible"))
        else:
            log.append((pattern, "infeasible"))
    if not cands:
        raise SubproblemError("subproblem unsolvable: no activity pattern is feasible", log)
    return _pick(cands, xk)


def solve_subproblem(ge: GeneralizedEquation, xk) -> np.ndarray:
    """The Newton step: ``x+`` with ``0 in f(xk) + J(xk)(x+ - xk) + F(x+)``."""
    xk = as_vector(xk, "xk")
    M = ge.jacobian(xk)
    a = ge.f(xk) - M @ xk
    F = ge.F
    if isinstance(F, ZeroMap):
        try:
            return np.linalg.solve(M, -a)
        except np.linalg.LinAlgError as e:
            raise SubproblemError("subproblem unsolvable: singular Jacobian", [("linear", "singular")]) from e
    if isinstance(F, NormalConeOfBox):
        return _solve_box(F, M, a, xk)
    P = Polyhedron(F.A - F.B @ M, F.c + F.B @ a)
    try:
        return project_polyhedron(P, xk)
    except EmptySetError as e:
        raise SubproblemError("subproblem unsolvable: linearized inclusion has no solution") from e


@dataclass(frozen=True)
class NewtonConfig:
    x0: np.ndarray
    tol: float = 1e-10
    max_iter: int = 50

    def __post_init__(self):
        object.__setattr__(self, "x0", as_vector(self.x0, "x0"))
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class RateFit:
    exponent_hat: float
    gamma_hat: float
    pairs: int

    def to_dict(self) -> dict:
        return {"exponent_hat": self.exponent_hat, "gamma_hat": self.gamma_hat, "pairs": self.pairs}


@dataclass
class NewtonTrace:
    iterates: list
    residuals: list
    converged: bool = False
    failure: Optional[str] = None
    failed_at: Optional[int] = None
    errors_to_ref: Optional[list] = None
    rate: Optional[RateFit] = None
    regularity: Optional[dict] = None

    @property
    def x(self) -> np.ndarray:
        return self.iterates[-1]


def monitor_regularity(ge: GeneralizedEquation, xstar, delta: float = 0.1) -> dict:
    """Grid estimate of ``rg (F + f)`` at ``(xstar, 0)``; a capped or tiny value warns of degeneracy."""
    xstar = as_vector(xstar, "xstar")
    res, levels = (21, 2) if ge.n == 1 else (7, 1)
    est = estimate_rg_q(sum_with_function(ge.F, ge.f),
                        ModulusQuery(1.0, xstar, np.zeros(ge.n), delta, resolution=res,
                                     refinement_levels=levels))
    return {"tau_hat": est.tau_hat, "capped": est.capped}


def josephy_newton(ge: GeneralizedEquation, cfg: NewtonConfig, xstar=None,
                   monitor: bool = False) -> NewtonTrace:
    """Run Newton steps from ``cfg.x0`` until the residual is at most ``cfg.tol``.

    With a reference solution ``xstar`` the trace also records errors and,
    when the error window allows it, a rate fit. ``monitor`` additionally
    records a regularity estimate at ``xstar``.
    """
    x = cfg.x0.copy()
    trace = NewtonTrace([x.copy()], [residual(ge, x)])
    if xstar is not None and monitor:
        trace.regularity = monitor_regularity(ge, xstar)
    for k in range(int(cfg.max_iter)):
        if trace.residuals[-1] <= cfg.tol:
            break
        try:
            x = solve_subproblem(ge, x)
        except SubproblemError as e:
            trace.failure = str(e)
            trace.failed_at = k
            break
        trace.iterates.append(x.copy())
        trace.residuals.append(residual(ge, x))
    trace.converged = trace.failure is None and trace.residuals[-1] <= cfg.tol
    if xstar is not None:
        xstar = as_vector(xstar, "xstar")
        trace.errors_to_ref = [float(np.linalg.norm(v - xstar)) for v in trace.iterates]
        try:
            trace.rate = estimate_rate(trace, xstar)
        except InsufficientDecayWindow:
            trace.rate = None
    return trace


def estimate_rate(trace: NewtonTrace, xstar, window: tuple = RATE_WINDOW) -> RateFit:
    """Least-squares fit of ``log e_{k+1} = p log e_k + log gamma``.

    Only consecutive pairs with both errors inside ``window`` take part;
    fewer than three such pairs raise :class:`InsufficientDecayWindow`.
    """
    xstar = as_vector(xstar, "xstar")
    e = np.array([np.linalg.norm(np.asarray(v) - xstar) for v in trace.iterates])
    lo, hi = window
    inside = (e > lo) & (e < hi)
    idx = [k for k in range(len(e) - 1) if inside[k] and inside[k + 1]]
    if len(idx) < MIN_RATE_PAIRS:
        raise InsufficientDecayWindow(
            f"insufficient decay window: {len(idx)} admissible pairs, need {MIN_RATE_PAIRS}"
        )
    u = np.log(e[idx])
    v = np.log(e[[k + 1 for k in idx]])
    p, c = np.polyfit(u, v, 1)
    return RateFit(float(p), float(np.exp(c)), len(idx))
