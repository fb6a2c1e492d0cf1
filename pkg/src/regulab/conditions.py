"""Primal (slope) and dual (coderivative) regularity conditions, evaluated on samples.

A sampled verdict is evidence, never proof, so verdicts are reported as
``holds_on_samples``. The finite-space Ekeland oracle at the end is exact.
"""
from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm, qmc

from .geometry import INF, as_vector, check_gamma, ext_to_json, product_distance
from .mappings import (
    GRAPH_TOL,
    EvalRegion,
    LinearMap,
    PolyhedralGraph,
    SetValuedMap,
    graph_sample,
    image_distance,
)
from .moduli import EXCLUSION, SEARCH_FACTOR, ModulusQuery, PreconditionError, ball_grid, estimate_rg_q

ACTIVE_TOL = 1e-9
MAX_GENERATORS = 12
SLACK = 0.9


class SizeError(ValueError):
    """Instance exceeds the exact-enumeration size bound."""


# -- slope machinery ---------------------------------------------------------

def psi_value(F: SetValuedMap, y, q: float, u, v) -> float:
    """``|v - y|^q`` on the graph of ``F``, ``INF`` off it."""
    if image_distance(F, u, v) > GRAPH_TOL:
        return INF
    return float(np.linalg.norm(np.asarray(v, dtype=float) - np.asarray(y, dtype=float)) ** q)


@dataclass(frozen=True)
class SlopeQuery:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    q: float
    gamma: float = 1.0
    radii: tuple = (0.1, 0.03, 0.01)
    resolution: int = 41

    def __post_init__(self):
        object.__setattr__(self, "x", as_vector(self.x, "x"))
        object.__setattr__(self, "z", as_vector(self.z, "z"))
        object.__setattr__(self, "y", as_vector(self.y, "y"))
        check_gamma(self.gamma)
        radii = tuple(float(r) for r in self.radii)
        if any(r < 1e-5 for r in radii) or any(a <= b for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly decreasing and >= 1e-5")
        object.__setattr__(self, "radii", radii)


def _slope_quotients(U, V, x, z, y, q, gamma):
    d = np.maximum(np.linalg.norm(U - x, axis=1), gamma * np.linalg.norm(V - z, axis=1))
    num = np.linalg.norm(z - y) ** q - np.linalg.norm(V - y, axis=1) ** q
    ok = d > 1e-14
    out = np.full(len(U), -INF)
    out[ok] = np.maximum(num[ok], 0.0) / d[ok]
    return out, d


def slope_psi(F: SetValuedMap, query: SlopeQuery) -> list:
    """Per-radius lower estimates of the slope of ``psi_y`` at ``(x, z)``.

    Each entry is ``(radius, estimate)`` with ``estimate`` the max of
    ``(|z-y|^q - |v-y|^q)_+ / d_gamma((u,v),(x,z))`` over sampled graph
    points within that radius, or ``None`` if no sample fell inside it.
    """
    x, z, y = query.x, query.z, query.y
    if image_distance(F, x, z) > GRAPH_TOL:
        raise PreconditionError("(x, z) is not on the graph")
    out = []
    for r in query.radii:
        region = EvalRegion(x, z, r, r / query.gamma, query.resolution)
        pairs = graph_sample(F, region)
        if not pairs:
            out.append((r, None))
            continue
        U = np.array([p[0] for p in pairs])
        V = np.array([p[1] for p in pairs])
        quot, d = _slope_quotients(U, V, x, z, y, query.q, query.gamma)
        quot = quot[(d <= r * (1 + 1e-12)) & np.isfinite(quot)]
        out.append((r, float(quot.max()) if quot.size else None))
    return out


@dataclass
class SlopeVerdict:
    holds_on_samples: bool
    violating_witness: Optional[dict]
    admissible: int
    min_estimate: float
    rg_crosscheck: Optional[float] = None
    crosscheck_ok: Optional[bool] = None
    domain_params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return ext_to_json({
            "condition": "slope",
            "domain_params": self.domain_params,
            "verdict": "holds_on_samples" if self.holds_on_samples else "violated",
            "witness": self.violating_witness,
            "samples": self.admissible,
            "min_estimate": self.min_estimate,
            "rg_crosscheck": self.rg_crosscheck,
            "crosscheck_ok": self.crosscheck_ok,
        })


def check_slope_sufficiency(F: SetValuedMap, xbar, ybar, q: float, tau: float, delta: float,
                            mu: float, gamma: float = 1.0, resolution: int = 21) -> SlopeVerdict:
    """Sampled check of the slope criterion for order-``q`` regularity with ``tau, delta, mu``.

    Triples ``(x, y, z)`` range over ``x`` in ``B_{delta+mu}(xbar)``, ``y`` in
    ``B_delta(ybar)`` with ``x`` not a solution, and ``z`` the nearest point of
    ``F(x)`` to ``y`` with ``|z - y| < (tau mu)^{1/q}``. At each triple the
    slope of ``psi_y`` is taken over the whole admissible graph window
    ``|u - xbar| < delta + mu``, ``|v - y| < (tau mu)^{1/q}`` (the nonlocal
    slope); the nearest solution point ``(u*, y)`` is always included. The
    criterion holds on samples if every estimate is at least ``0.9 tau``.
    """
    xbar = as_vector(xbar, "xbar")
    ybar = as_vector(ybar, "ybar")
    gamma = check_gamma(gamma)
    rho = (tau * mu) ** (1.0 / q)
    R = delta + mu
    search = EvalRegion(xbar, ybar, SEARCH_FACTOR * R, delta, max(resolution, 21))
    sample_region = EvalRegion(xbar, ybar, R, delta + rho, 2 * resolution - 1)
    G = graph_sample(F, sample_region)
    GU = np.array([p[0] for p in G]) if G else np.zeros((0, F.n))
    GV = np.array([p[1] for p in G]) if G else np.zeros((0, F.m))
    in_ball = np.linalg.norm(GU - xbar, axis=1) < R if len(G) else np.zeros(0, bool)
    GU, GV = GU[in_ball], GV[in_ball]

    params = {"q": q, "tau": tau, "delta": delta, "mu": mu, "gamma": gamma, "resolution": resolution}
    worst = INF
    witness = None
    count = 0
    for x in ball_grid(xbar, R, resolution):
        if np.linalg.norm(x - xbar) >= R:
            continue
        for y in ball_grid(ybar, delta, resolution):
            if np.linalg.norm(y - ybar) >= delta:
                continue
            pre = F.preimage_distances(x[None, :], y, search)[0][0]
            if pre <= EXCLUSION:
                continue
            z = F.project_image(x, y)
            if z is None or not np.linalg.norm(z - y) < rho:
                continue
            U, V = GU, GV
            anchor = F.preimage_nearest(x, y, search)
            if anchor is not None:
                U = np.vstack([U, anchor[None, :]])
                V = np.vstack([V, y[None, :]])
            window = (np.linalg.norm(U - xbar, axis=1) < R) & (np.linalg.norm(V - y, axis=1) < rho)
            quot, _ = _slope_quotients(U[window], V[window], x, z, y, q, gamma)
            est = float(quot.max()) if quot.size else 0.0
            count += 1
            if est < worst:
                worst = est
                witness = {"x": x.tolist(), "y": y.tolist(), "z": z.tolist(), "slope": est}
    holds = count == 0 or worst >= SLACK * tau
    verdict = SlopeVerdict(holds, None if holds else witness, count,
                           worst if count else INF, domain_params=params)
    if holds:
        rg = estimate_rg_q(F, ModulusQuery(q, xbar, ybar, delta, mu=mu, residual_cap=tau * mu,
                                           resolution=max(resolution, 5), refinement_levels=1))
        verdict.rg_crosscheck = rg.tau_hat
        verdict.crosscheck_ok = bool(rg.tau_hat >= SLACK * tau)
    return verdict


def numeric_slope(g: Callable, x, radii: Sequence[float], resolution: int = 41) -> list:
    """Per-radius estimates of ``limsup (g(x) - g(u))_+ / |x - u|``; last entry is the working value."""
    x = as_vector(x, "x")
    gx = float(g(x))
    if gx == INF:
        return [(float(r), INF) for r in radii]
    out = []
    for r in radii:
        U = ball_grid(x, r, resolution)
        d = np.linalg.norm(U - x, axis=1)
        U, d = U[d > 0], d[d > 0]
        gu = np.array([float(g(u)) for u in U])
        out.append((float(r), float(np.max(np.maximum(gx - gu, 0.0) / d)) if d.size else 0.0))
    return out


@dataclass
class ChainRuleResult:
    residual: float
    lhs: float
    rhs: float
    passed: bool


def slope_chain_rule_check(g: Callable, x, q: float, radii: Sequence[float],
                           resolution: int = 41) -> ChainRuleResult:
    """Compare the slope of ``g^q`` with ``q g^{q-1}`` times the slope of ``g`` at ``x``."""
    x = as_vector(x, "x")
    gx = float(g(x))
    if not gx > 0:
        raise PreconditionError("the chain rule needs g(x) > 0")
    lhs = numeric_slope(lambda u: float(g(u)) ** q, x, radii, resolution)[-1][1]
    rhs = q * gx ** (q - 1) * numeric_slope(g, x, radii, resolution)[-1][1]
    residual = abs(lhs - rhs)
    return ChainRuleResult(residual, lhs, rhs, bool(residual <= 0.05 * max(abs(rhs), 1e-12) or residual == 0))


# -- coderivatives of polyhedral graphs ----------------------------------------

@dataclass
class PolyhedralNormalCone:
    """``cone{(u_i, v_i)}``; an empty generator list means the cone ``{0}``."""

    generators: list

    def matrices(self, n: int, m: int):
        if not self.generators:
            return np.zeros((n, 0)), np.zeros((m, 0))
        U = np.column_stack([g[0] for g in self.generators])
        V = np.column_stack([g[1] for g in self.generators])
        return U, V


def linear_graph(A) -> PolyhedralGraph:
    """Graph of ``x -> A x`` as ``A x - y <= 0``, ``-A x + y <= 0``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    I = np.eye(A.shape[0])
    return PolyhedralGraph(np.vstack([A, -A]), np.vstack([-I, I]), np.zeros(2 * A.shape[0]))


def as_polyhedral(G) -> PolyhedralGraph:
    if isinstance(G, PolyhedralGraph):
        return G
    if isinstance(G, LinearMap):
        return linear_graph(G.A)
    raise TypeError(f"expected a polyhedral graph, got {type(G).__name__}")


def normal_cone_polyhedral_graph(G, x, z) -> PolyhedralNormalCone:
    G = as_polyhedral(G)
    x = as_vector(x, "x")
    z = as_vector(z, "z")
    slack = G.A @ x + G.B @ z - G.c
    if np.any(slack > ACTIVE_TOL):
        raise PreconditionError("point is not on the graph")
    active = np.flatnonzero(np.abs(slack) <= ACTIVE_TOL)
    return PolyhedralNormalCone([(G.A[i].copy(), G.B[i].copy()) for i in active])


class _SupportSolver:
    """Precomputed support enumeration for one normal cone ``cone{(u_i, v_i)}``.

    On an independent support ``S`` the minimizer of ``|U_S lam|`` subject to
    ``V_S lam = -y*`` is linear in ``y*``; each support stores that operator.
    """

    def __init__(self, U: np.ndarray, V: np.ndarray):
        self.U, self.V = U, V
        n, k = U.shape
        m = V.shape[0]
        if k > MAX_GENERATORS:
            raise SizeError(f"{k} active generators exceed the enumeration bound {MAX_GENERATORS}")
        W = np.vstack([U, V])
        self.supports = []
        for size in range(1, min(k, n + m) + 1):
            for S in itertools.combinations(range(k), size):
                S = list(S)
                if np.linalg.matrix_rank(W[:, S]) < size:
                    continue
                US, VS = U[:, S], V[:, S]
                K = np.block([[US.T @ US, VS.T], [VS, np.zeros((m, m))]])
                # solution of K [lam; nu] = [0; -y*] for every consistent y*
                M = np.linalg.pinv(K)[:size, size:]
                self.supports.append((S, M))

    def distances(self, Ystar: np.ndarray) -> np.ndarray:
        Ystar = np.atleast_2d(Ystar)
        ynorm = np.linalg.norm(Ystar, axis=1)
        tol = 1e-9 * (1.0 + ynorm)
        best = np.where(ynorm <= tol, 0.0, INF)
        for S, M in self.supports:
            lam = -Ystar @ M.T
            feas = np.linalg.norm(lam @ self.V[:, S].T + Ystar, axis=1) <= tol
            feas &= np.all(lam >= -1e-12, axis=1)
            val = np.linalg.norm(lam @ self.U[:, S].T, axis=1)
            best = np.where(feas, np.minimum(best, val), best)
        return best


def _solver_at(G: PolyhedralGraph, x, z) -> _SupportSolver:
    cone = normal_cone_polyhedral_graph(G, x, z)
    return _SupportSolver(*cone.matrices(G.n, G.m))


def coderivative_distance(G, x, z, ystar) -> float:
    """``d(0, D*F(x, z)(y*))`` for a polyhedral graph, exact.

    Minimizes ``|sum lam_i u_i|`` subject to ``sum lam_i v_i = -y*``,
    ``lam >= 0``. By the conic Caratheodory theorem an optimal ``lam`` is
    supported on linearly independent generators, so enumerating those
    supports and solving the equality-constrained problem on each is exact.
    Returns ``INF`` when ``D*F(x, z)(y*)`` is empty.
    """
    G = as_polyhedral(G)
    ystar = as_vector(ystar, "ystar")
    return float(_solver_at(G, x, z).distances(ystar[None, :])[0])


@dataclass(frozen=True)
class CoderivativeConditionQuery:
    q: float
    tau: float
    delta: float
    mu: float
    eta: float = 0.05
    alpha: float = 0.5
    n_x: int = 7
    n_y: int = 7
    n_zstar: int = 64
    n_ystar: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not (self.tau > 0 and self.delta > 0 and self.mu > 0):
            raise ValueError("tau, delta, mu must be positive")


def sphere_points(m: int, count: int, seed: int) -> np.ndarray:
    """Scrambled-Sobol points pushed to the unit sphere in ``R^m``."""
    if m == 1:
        return np.array([[1.0], [-1.0]])
    s = qmc.Sobol(d=m, scramble=True, seed=seed).random(int(2 ** np.ceil(np.log2(max(count, 2)))))
    g = norm.ppf(np.clip(s, 1e-12, 1 - 1e-12))[:count]
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def instance_seed(seed: int, instance_id: str = "") -> int:
    return (int(seed) * 1000003 + zlib.crc32(instance_id.encode())) % (2**32)


@dataclass
class CoderivativeVerdict:
    holds_on_samples: bool
    violating_witness: Optional[dict]
    samples: int
    min_value: float
    seed: int
    rg_crosscheck: Optional[float] = None
    crosscheck_ok: Optional[bool] = None
    domain_params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return ext_to_json({
            "condition": "coderivative",
            "domain_params": self.domain_params,
            "verdict": "holds_on_samples" if self.holds_on_samples else "violated",
            "witness": self.violating_witness,
            "samples": self.samples,
            "min_value": self.min_value,
            "seed": self.seed,
            "rg_crosscheck": self.rg_crosscheck,
            "crosscheck_ok": self.crosscheck_ok,
        })


def check_coderivative_sufficiency(G, xbar, ybar, query: CoderivativeConditionQuery) -> CoderivativeVerdict:
    """Sampled check of ``q |z-y|^{q-1} d(0, D*F(x,z)(y*)) >= tau``.

    ``z*`` runs over quasi-random unit vectors with ``<z*, z-y> > alpha |z-y|``
    and ``y*`` over perturbations of ``z*`` with
    ``q |z-y|^{q-1} |y* - z*| < eta``.
    """
    G = as_polyhedral(G)
    xbar = as_vector(xbar, "xbar")
    ybar = as_vector(ybar, "ybar")
    q, tau = query.q, query.tau
    rho = (tau * query.mu) ** (1.0 / q)
    R = query.delta + query.mu
    zstars = sphere_points(G.m, query.n_zstar, query.seed)
    dirs = sphere_points(G.m, max(query.n_ystar, 2), query.seed + 1)
    radii_frac = (np.arange(query.n_ystar) + 0.5) / query.n_ystar
    params = {"q": q, "tau": tau, "delta": query.delta, "mu": query.mu,
              "eta": query.eta, "alpha": query.alpha}
    worst = INF
    witness = None
    count = 0
    for x in ball_grid(xbar, R, query.n_x):
        if np.linalg.norm(x - xbar) >= R:
            continue
        for y in ball_grid(ybar, query.delta, query.n_y):
            if np.linalg.norm(y - ybar) >= query.delta:
                continue
            if G.preimage_distances(x[None, :], y)[0][0] <= EXCLUSION:
                continue
            z = G.project_image(x, y)
            if z is None:
                continue
            r = np.linalg.norm(z - y)
            if not 0 < r < rho:
                continue
            scale = q * r ** (q - 1)
            Z = zstars[zstars @ (z - y) > query.alpha * r]
            if not len(Z):
                continue
            Zrep = np.repeat(Z, len(radii_frac), axis=0)
            offs = np.tile(radii_frac[:, None] * dirs[np.arange(len(radii_frac)) % len(dirs)], (len(Z), 1))
            Ys = Zrep + (query.eta / scale) * offs
            vals = scale * _solver_at(G, x, z).distances(Ys)
            count += len(vals)
            i = int(np.argmin(vals))
            if vals[i] < worst:
                worst = float(vals[i])
                witness = {"x": x.tolist(), "y": y.tolist(), "z": z.tolist(),
                           "zstar": Zrep[i].tolist(), "ystar": Ys[i].tolist(), "value": worst}
    holds = count == 0 or worst >= tau
    verdict = CoderivativeVerdict(holds, None if holds else witness, count,
                                  worst if count else INF, query.seed, domain_params=params)
    if holds:
        rg = estimate_rg_q(G, ModulusQuery(q, xbar, ybar, query.delta, mu=query.mu,
                                           residual_cap=tau * query.mu, resolution=max(query.n_x, 5),
                                           refinement_levels=1))
        verdict.rg_crosscheck = rg.tau_hat
        verdict.crosscheck_ok = bool(rg.tau_hat >= SLACK * tau)
    return verdict


# -- Ekeland points on finite spaces ----------------------------------------------

@dataclass
class EkelandQuery:
    dist: np.ndarray
    values: np.ndarray
    x0: int
    epsilon: float
    lam: float
    points: Optional[list] = None

    def __post_init__(self):
        self.dist = np.asarray(self.dist, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        N = len(self.values)
        if self.dist.shape != (N, N):
            raise ValueError("dist must be a square matrix matching values")
        if not (self.epsilon > 0 and self.lam > 0):
            raise ValueError("epsilon and lambda must be positive")
        if not 0 <= self.x0 < N:
            raise ValueError("x0 out of range")


@dataclass
class EkelandCertificate:
    index: int
    distance_ok: bool
    decrease_ok: bool
    minimality_ok: bool
    iterations: int

    @property
    def ok(self) -> bool:
        return self.distance_ok and self.decrease_ok and self.minimality_ok


def verify_ekeland(query: EkelandQuery, xhat: int, tol: float = 1e-12) -> tuple[bool, bool, bool]:
    """Exhaustive check of the three Ekeland conditions at ``xhat``."""
    D, f = query.dist, query.values
    c = query.epsilon / query.lam
    i_ok = bool(D[xhat, query.x0] < query.lam)
    ii_ok = bool(f[xhat] <= f[query.x0])
    finite = np.isfinite(f)
    iii_ok = bool(np.all(f[finite] + c * D[finite, xhat] >= f[xhat] - tol))
    return i_ok, ii_ok, iii_ok


def ekeland_point(query: EkelandQuery) -> EkelandCertificate:
    """Ekeland point on a finite metric space by strict-descent iteration.

    ``x_{k+1}`` minimizes ``f(u) + (eps/lam) d(u, x_k)`` (lowest index on
    ties) and is accepted only if it strictly decreases below ``f(x_k)``.
    """
    f = query.values
    if not f[query.x0] < np.min(f) + query.epsilon:
        raise PreconditionError("x0 must satisfy f(x0) < inf f + epsilon")
    c = query.epsilon / query.lam
    k = query.x0
    it = 0
    while True:
        obj = f + c * query.dist[:, k]
        j = int(np.argmin(obj))
        if not obj[j] < f[k]:
            break
        k = j
        it += 1
    return EkelandCertificate(k, *verify_ekeland(query, k), iterations=it)
