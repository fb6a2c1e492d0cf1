"""Grid estimators for regularity and Hölder-continuity moduli.

``estimate_rg_q`` takes the minimum of ``d(y, F(x))^q / d(x, F^{-1}(y))``
over grid pairs near the base point, which bounds the regularity modulus
from above on that grid. The Hölder estimators take a maximum and bound
their modulus from below. Refinement levels use nested grids
(``r -> 2r - 1`` points per axis), so every trace is monotone.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .functions import CallableFunction, Function
from .geometry import INF, as_vector, ext_to_json
from .mappings import (
    EvalRegion,
    NotInvertibleError,
    SampledGraph,
    SetValuedMap,
    grid,
    graph_sample,
    image_distance,
    inverse,
)

CAP_VALUE = 1e6
EXCLUSION = 1e-6
ON_GRAPH_TOL = 1e-9
#: preimage search box half-width, in multiples of delta
SEARCH_FACTOR = 4.0


class PreconditionError(ValueError):
    """An operation was called outside its domain."""


@dataclass(frozen=True)
class ModulusQuery:
    q: float
    xbar: np.ndarray
    ybar: np.ndarray
    delta: float
    mu: Optional[float] = None
    residual_cap: Optional[float] = None
    resolution: int = 21
    refinement_levels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "xbar", as_vector(self.xbar, "xbar"))
        object.__setattr__(self, "ybar", as_vector(self.ybar, "ybar"))
        if not self.q > 0:
            raise ValueError(f"order q must be positive, got {self.q}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.mu is None:
            object.__setattr__(self, "mu", float(self.delta))
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.residual_cap is not None and not self.residual_cap > 0:
            raise ValueError("residual_cap must be positive")
        if int(self.resolution) < 5:
            raise ValueError("resolution must be at least 5")
        if int(self.refinement_levels) < 1:
            raise ValueError("refinement_levels must be positive")

    def resolutions(self) -> list[int]:
        r = int(self.resolution)
        return [(r - 1) * 2**k + 1 for k in range(int(self.refinement_levels))]


@dataclass
class ModulusEstimate:
    tau_hat: float
    witness: Optional[tuple] = None
    admissible_pairs: int = 0
    trace: list = field(default_factory=list)
    capped: bool = False

    def to_row(self, instance_id: str, kind: str, query: ModulusQuery) -> dict:
        """Row of the modulus CSV report."""
        wx, wy = ("", "") if self.witness is None else self.witness
        fmt = lambda v: ";".join(repr(float(t)) for t in np.atleast_1d(v)) if len(np.atleast_1d(v)) else ""
        return {
            "instance_id": instance_id,
            "kind": kind,
            "q": query.q,
            "delta": query.delta,
            "mu": query.mu,
            "resolution": query.resolutions()[-1],
            "tau_hat": ext_to_json(float(self.tau_hat)),
            "capped": self.capped,
            "witness_x": fmt(wx) if self.witness is not None else "",
            "witness_y": fmt(wy) if self.witness is not None else "",
        }


def ball_grid(center: np.ndarray, delta: float, resolution: int) -> np.ndarray:
    G = grid(center, delta, resolution)
    keep = np.linalg.norm(G - center, axis=1) <= delta * (1 + 1e-12)
    return G[keep]


def _check_on_graph(F: SetValuedMap, xbar, ybar):
    r = image_distance(F, xbar, ybar)
    if not r <= ON_GRAPH_TOL:
        raise PreconditionError(f"base point is not on the graph (residual {r:.3g})")


def estimate_rg_q(F: SetValuedMap, query: ModulusQuery) -> ModulusEstimate:
    """Upper grid estimate of the order-``q`` regularity modulus at ``(xbar, ybar)``.

    Pairs within ``EXCLUSION`` of ``F^{-1}(y)`` are skipped, as are pairs with
    empty ``F(x)`` (the inequality holds there trivially). When
    ``residual_cap`` is set only pairs with ``d(y, F(x))^q < residual_cap``
    count. If no pair is admissible the estimate is capped at ``CAP_VALUE``.
    """
    _check_on_graph(F, query.xbar, query.ybar)
    q = float(query.q)
    best = INF
    witness = None
    trace = []
    count = 0
    search = EvalRegion(query.xbar, query.ybar, SEARCH_FACTOR * query.delta, query.delta,
                        max(query.resolution, 21))
    for res in query.resolutions():
        X = ball_grid(query.xbar, query.delta, res)
        Y = ball_grid(query.ybar, query.delta, res)
        count = 0
        for y in Y:
            img = F.image_distances_paired(X, np.broadcast_to(y, (len(X), F.m)))
            pre, _ = F.preimage_distances(X, y, search)
            ok = (pre > EXCLUSION) & np.isfinite(img)
            if query.residual_cap is not None:
                ok &= img**q < query.residual_cap
            if not np.any(ok):
                continue
            count += int(ok.sum())
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(np.isinf(pre), 0.0, img**q / pre)
            ratio = np.where(ok, ratio, INF)
            i = int(np.argmin(ratio))
            if ratio[i] < best:
                best = float(ratio[i])
                witness = (X[i].copy(), y.copy())
        trace.append((res, best if witness is not None else CAP_VALUE))
    if witness is None:
        return ModulusEstimate(CAP_VALUE, None, 0, trace, capped=True)
    return ModulusEstimate(best, witness, count, trace, capped=False)


def _lip_candidates(pairs, xbar, ybar, delta):
    xs = []
    seen = set()
    kept = []
    for x, y in pairs:
        if np.linalg.norm(x - xbar) <= delta * (1 + 1e-12):
            key = tuple(np.round(x, 12))
            if key not in seen:
                seen.add(key)
                xs.append(x)
            if np.linalg.norm(y - ybar) <= delta * (1 + 1e-12):
                kept.append((x, y))
    return np.array(xs), kept


def estimate_lip_q(Phi: SetValuedMap, query: ModulusQuery) -> ModulusEstimate:
    """Lower grid estimate of the order-``q`` Hölder modulus of ``Phi`` at ``(xbar, ybar)``.

    Maximizes ``d(y, Phi(x))^q / |x - x'|`` over graph samples ``(x', y)`` and
    sampled domain points ``x``. With no admissible pair the supremum is over
    an empty set and the estimate is 0 (flagged as capped).
    """
    _check_on_graph(Phi, query.xbar, query.ybar)
    q = float(query.q)
    best = -1.0
    witness = None
    trace = []
    count = 0
    for res in query.resolutions():
        region = EvalRegion(query.xbar, query.ybar, query.delta, query.delta, res)
        X, pairs = _lip_candidates(graph_sample(Phi, region), query.xbar, query.ybar, query.delta)
        count = 0
        for xp, y in pairs:
            d = np.linalg.norm(X - xp, axis=1)
            ok = d >= EXCLUSION
            if not np.any(ok):
                continue
            img = Phi.image_distances_paired(X[ok], np.broadcast_to(y, (int(ok.sum()), Phi.m)))
            ratio = img**q / d[ok]
            count += int(ok.sum())
            i = int(np.argmax(ratio))
            if ratio[i] > best:
                best = float(ratio[i])
                witness = (X[ok][i].copy(), y.copy())
        trace.append((res, max(best, 0.0)))
    if witness is None:
        return ModulusEstimate(0.0, None, 0, trace, capped=True)
    return ModulusEstimate(best, witness, count, trace, capped=False)


def estimate_lip_q_function(f, xbar, q: float, delta: float, resolution: int = 21,
                            refinement_levels: int = 1) -> ModulusEstimate:
    """Lower grid estimate of ``sup |f(x) - f(x')|^q / |x - x'|`` over the ball ``B_delta(xbar)``."""
    xbar = as_vector(xbar, "xbar")
    if not isinstance(f, Function):
        m = np.atleast_1d(np.asarray(f(xbar))).size
        f = CallableFunction(f, xbar.size, m)
    best = 0.0
    witness = None
    trace = []
    count = 0
    for k in range(int(refinement_levels)):
        res = (int(resolution) - 1) * 2**k + 1
        X = ball_grid(xbar, delta, res)
        FX = f.eval_many(X)
        count = 0
        for i in range(len(X)):
            d = np.linalg.norm(X[i + 1 :] - X[i], axis=1)
            if d.size == 0:
                continue
            ok = d >= EXCLUSION
            ratio = np.linalg.norm(FX[i + 1 :][ok] - FX[i], axis=1) ** q / d[ok]
            count += int(ok.sum())
            if ratio.size:
                j = int(np.argmax(ratio))
                if ratio[j] > best or witness is None:
                    best = max(best, float(ratio[j]))
                    witness = (X[i].copy(), X[i + 1 :][ok][j].copy())
        trace.append((res, best))
    return ModulusEstimate(best, witness, count, trace, capped=False)


@dataclass
class DualityReport:
    rg_estimate: ModulusEstimate
    lip_inverse_estimate: ModulusEstimate
    residual: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "rg_tau_hat": self.rg_estimate.tau_hat,
            "lip_inverse_tau_hat": self.lip_inverse_estimate.tau_hat,
            "residual": self.residual,
            "pass": self.passed,
        }


def inverse_for_estimation(F: SetValuedMap, query: ModulusQuery) -> SetValuedMap:
    """Closed-form inverse when available, else the swapped sampled graph on the finest grid."""
    try:
        return inverse(F)
    except NotInvertibleError:
        res = query.resolutions()[-1]
        region = EvalRegion(query.xbar, query.ybar, query.delta, query.delta, res)
        pairs = graph_sample(F, region)
        return SampledGraph.from_pairs([(y, x) for x, y in pairs])


def check_inverse_duality(F: SetValuedMap, query: ModulusQuery) -> DualityReport:
    """Compare ``rg^q F`` with ``(lip^{1/q} F^{-1})^{-q}`` at the swapped base point."""
    rg = estimate_rg_q(F, query)
    Finv = inverse_for_estimation(F, query)
    lip_query = replace(query, q=1.0 / query.q, xbar=query.ybar, ybar=query.xbar,
                        mu=None, residual_cap=None)
    lip = estimate_lip_q(Finv, lip_query)
    if lip.tau_hat == 0 or lip.tau_hat == INF:
        dual = INF if lip.tau_hat == 0 else 0.0
    else:
        dual = lip.tau_hat ** (-query.q)
    if rg.capped and dual == INF:
        residual = 0.0
    elif dual == INF:
        residual = INF
    else:
        residual = abs(rg.tau_hat - dual)
    passed = residual <= 0.05 * max(1.0, rg.tau_hat)
    return DualityReport(rg, lip, float(residual), bool(passed))
