"""Set-valued mappings ``F: R^n => R^m`` and their two primitive distances.

Each representation knows how to compute the residual ``d(y, F(x))`` and the
solution distance ``d(x, F^{-1}(y))``. Linear, polyhedral, normal-cone and
sampled representations are exact; smooth maps and sums with a nonlinear
function locate ``F^{-1}(y)`` by grid scanning plus local root polishing
inside a search box, and report a ``search_limited`` flag when nothing was
found there.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq, least_squares, minimize_scalar

from .functions import Affine, CallableFunction, Function, combine, zero_function
from .geometry import (
    INF,
    DimensionError,
    Polyhedron,
    as_vector,
    polyhedron_distance,
    project_polyhedron,
    EmptySetError,
)

MEMBER_TOL = 1e-9
ROOT_TOL = 1e-10
GRAPH_TOL = 1e-8


class NotInvertibleError(TypeError):
    """The representation has no closed-form inverse."""


@dataclass(frozen=True)
class EvalRegion:
    """Boxes ``xbar +- delta_x`` and ``ybar +- delta_y`` gridded with ``resolution`` points per axis."""

    xbar: np.ndarray
    ybar: np.ndarray
    delta_x: float
    delta_y: float
    resolution: int = 21

    def __post_init__(self):
        object.__setattr__(self, "xbar", as_vector(self.xbar, "xbar"))
        object.__setattr__(self, "ybar", as_vector(self.ybar, "ybar"))
        if not (self.delta_x > 0 and self.delta_y > 0):
            raise ValueError("region radii must be positive")
        if int(self.resolution) < 3:
            raise ValueError("resolution must be at least 3")
        object.__setattr__(self, "resolution", int(self.resolution))

    def x_grid(self, resolution: Optional[int] = None) -> np.ndarray:
        return grid(self.xbar, self.delta_x, resolution or self.resolution)

    def y_grid(self, resolution: Optional[int] = None) -> np.ndarray:
        return grid(self.ybar, self.delta_y, resolution or self.resolution)

    def x_bounds(self):
        return self.xbar - self.delta_x, self.xbar + self.delta_x

    def in_y_box(self, Y: np.ndarray) -> np.ndarray:
        return np.all(np.abs(Y - self.ybar) <= self.delta_y * (1 + 1e-12), axis=-1)

    def in_x_box(self, X: np.ndarray) -> np.ndarray:
        return np.all(np.abs(X - self.xbar) <= self.delta_x * (1 + 1e-12), axis=-1)


def grid(center, delta: float, resolution: int) -> np.ndarray:
    """Regular grid on the box ``center +- delta``, row-major, shape ``(resolution**d, d)``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    axes = [np.linspace(c - delta, c + delta, int(resolution)) for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def box_grid(lo, hi, resolution: int) -> np.ndarray:
    axes = [np.linspace(a, b, int(resolution)) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _norms(D: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(D * D, axis=-1))


def _dedupe(points: list, tol: float = 1e-7) -> np.ndarray:
    out: list = []
    for p in points:
        if all(np.linalg.norm(p - q) > tol for q in out):
            out.append(p)
    return np.array(out)


class SetValuedMap:
    """Base class; ``n`` is the domain and ``m`` the image dimension."""

    n: int
    m: int
    single_valued = False

    # -- residuals -------------------------------------------------------
    def image_distances_paired(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """``d(Y[i], F(X[i]))`` for each row ``i``."""
        raise NotImplementedError

    def project_image(self, x: np.ndarray, y: np.ndarray) -> Optional[np.ndarray]:
        """Nearest point of ``F(x)`` to ``y``; ``None`` when ``F(x)`` is empty."""
        raise NotImplementedError

    # -- solution distances ---------------------------------------------
    def preimage_distances(self, X: np.ndarray, y: np.ndarray,
                           region: Optional[EvalRegion] = None) -> tuple[np.ndarray, bool]:
        """``d(X[i], F^{-1}(y))`` for each row, and the search-limited flag."""
        raise NotImplementedError

    def preimage_nearest(self, x: np.ndarray, y: np.ndarray,
                         region: Optional[EvalRegion] = None) -> Optional[np.ndarray]:
        """Nearest point of ``F^{-1}(y)`` to ``x``, or ``None`` if none was found."""
        raise NotImplementedError

    def value(self, x: np.ndarray) -> np.ndarray:
        raise TypeError(f"{type(self).__name__} is not single-valued")


@dataclass(frozen=True, eq=False)
class ZeroMap(SetValuedMap):
    n: int = 1
    m: int = 1
    single_valued = True

    def image_distances_paired(self, X, Y):
        return _norms(np.asarray(Y, dtype=float))

    def project_image(self, x, y):
        return np.zeros(self.m)

    def value(self, x):
        return np.zeros(self.m)

    def preimage_distances(self, X, y, region=None):
        X = np.asarray(X, dtype=float)
        if np.linalg.norm(y) <= MEMBER_TOL:
            return np.zeros(X.shape[0]), False
        return np.full(X.shape[0], INF), False

    def preimage_nearest(self, x, y, region=None):
        return np.array(x, dtype=float) if np.linalg.norm(y) <= MEMBER_TOL else None


@dataclass(frozen=True, eq=False)
class LinearMap(SetValuedMap):
    """``F(x) = {A x}``."""

    A: np.ndarray
    single_valued = True
    _pinv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "_pinv", np.linalg.pinv(A))

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.A.shape[0]

    def value(self, x):
        return self.A @ x

    def image_distances_paired(self, X, Y):
        return _norms(np.asarray(X, dtype=float) @ self.A.T - Y)

    def project_image(self, x, y):
        return self.A @ x

    def preimage_distances(self, X, y, region=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        resid = self.A @ (self._pinv @ y) - y
        if np.linalg.norm(resid) > MEMBER_TOL * (1 + np.linalg.norm(y)):
            return np.full(X.shape[0], INF), False
        # nearest solution of A u = y is x - A^+ (A x - y)
        return _norms((X @ self.A.T - y) @ self._pinv.T), False

    def preimage_nearest(self, x, y, region=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.linalg.norm(self.A @ (self._pinv @ y) - y) > MEMBER_TOL * (1 + np.linalg.norm(y)):
            return None
        return x - self._pinv @ (self.A @ x - y)


@dataclass(frozen=True, eq=False)
class PolyhedralGraph(SetValuedMap):
    """``gph F = {(x, y) : A x + B y <= c}``."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if not (A.shape[0] == B.shape[0] == c.shape[0]):
            raise DimensionError("A, B, c must have the same number of rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", c)

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.B.shape[1]

    def image_slice(self, x) -> Polyhedron:
        return Polyhedron(self.B, self.c - self.A @ np.asarray(x, dtype=float))

    def preimage_slice(self, y) -> Polyhedron:
        return Polyhedron(self.A, self.c - self.B @ np.asarray(y, dtype=float))

    def image_distances_paired(self, X, Y):
        return np.array([polyhedron_distance(self.image_slice(x), y) for x, y in zip(X, Y)])

    def project_image(self, x, y):
        try:
            return project_polyhedron(self.image_slice(x), y)
        except EmptySetError:
            return None

    def preimage_distances(self, X, y, region=None):
        P = self.preimage_slice(y)
        return np.array([polyhedron_distance(P, x) for x in X]), False

    def preimage_nearest(self, x, y, region=None):
        try:
            return project_polyhedron(self.preimage_slice(y), x)
        except EmptySetError:
            return None

    def contains(self, x, y, tol: float = MEMBER_TOL) -> bool:
        return bool(np.all(self.A @ x + self.B @ y <= self.c + tol))


def _box_cone_coords(x, l, u, tol=MEMBER_TOL):
    """Per-coordinate cone type: 0 interior, 1 lower, 2 upper, 3 whole line, -1 outside."""
    kind = np.zeros(x.shape, dtype=int)
    at_l = np.abs(x - l) <= tol
    at_u = np.abs(x - u) <= tol
    kind[at_l] = 1
    kind[at_u] = 2
    kind[at_l & at_u] = 3
    kind[(x < l - tol) | (x > u + tol)] = -1
    return kind


@dataclass(frozen=True, eq=False)
class NormalConeOfBox(SetValuedMap):
    """``F(x) = N_C(x)`` for the box ``C = [lower, upper]``; empty off the box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise DimensionError("lower and upper must have the same length")
        if np.any(lo > hi):
            raise ValueError("box needs lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self):
        return self.lower.size

    @property
    def m(self):
        return self.lower.size

    def image_distances_paired(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        kind = _box_cone_coords(X, self.lower, self.upper)
        d = np.abs(Y)
        d = np.where(kind == 1, np.maximum(Y, 0.0), d)
        d = np.where(kind == 2, np.maximum(-Y, 0.0), d)
        d = np.where(kind == 3, 0.0, d)
        out = _norms(d)
        out[np.any(kind == -1, axis=1)] = INF
        return out

    def project_image(self, x, y):
        kind = _box_cone_coords(np.asarray(x, dtype=float), self.lower, self.upper)
        if np.any(kind == -1):
            return None
        p = np.zeros_like(y, dtype=float)
        p = np.where(kind == 1, np.minimum(y, 0.0), p)
        p = np.where(kind == 2, np.maximum(y, 0.0), p)
        p = np.where(kind == 3, y, p)
        return p

    def preimage_distances(self, X, y, region=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        D = np.zeros_like(X)
        for i in range(self.n):
            l, u = self.lower[i], self.upper[i]
            if abs(y[i]) <= MEMBER_TOL:
                D[:, i] = np.maximum(l - X[:, i], 0) + np.maximum(X[:, i] - u, 0)
            elif y[i] < 0:
                if not np.isfinite(l):
                    return np.full(X.shape[0], INF), False
                D[:, i] = np.abs(X[:, i] - l)
            else:
                if not np.isfinite(u):
                    return np.full(X.shape[0], INF), False
                D[:, i] = np.abs(X[:, i] - u)
        return _norms(D), False

    def preimage_nearest(self, x, y, region=None):
        x = np.asarray(x, dtype=float)
        p = np.clip(x, self.lower, self.upper)
        for i, yi in enumerate(np.asarray(y, dtype=float)):
            if abs(yi) <= MEMBER_TOL:
                continue
            bound = self.lower[i] if yi < 0 else self.upper[i]
            if not np.isfinite(bound):
                return None
            p[i] = bound
        return p


@dataclass(frozen=True, eq=False)
class Smooth(SetValuedMap):
    """``F(x) = {f(x)}`` for a function oracle with Jacobian."""

    f: Function
    single_valued = True
    _roots: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def n(self):
        return self.f.n

    @property
    def m(self):
        return self.f.m

    def value(self, x):
        return self.f(x)

    def image_distances_paired(self, X, Y):
        return _norms(self.f.eval_many(np.asarray(X, dtype=float)) - Y)

    def project_image(self, x, y):
        return self.f(x)

    def preimage_points(self, y, region: Optional[EvalRegion]):
        if isinstance(self.f, Affine):
            return None, False
        lo, hi = _search_box(region, self.n)
        key = (np.asarray(y, dtype=float).tobytes(), lo.tobytes(), hi.tobytes(), _res(region))
        if key not in self._roots:
            # memo only; the mapping itself never changes
            self._roots[key] = smooth_roots(self.f, y, lo, hi, _res(region))
        roots = self._roots[key]
        return roots, len(roots) == 0

    def preimage_distances(self, X, y, region=None):
        if isinstance(self.f, Affine):
            d, flag = LinearMap(self.f.A).preimage_distances(X, np.asarray(y) - self.f.b)
            return d, flag
        roots, limited = self.preimage_points(y, region)
        return _dist_to_points(X, roots), limited

    def preimage_nearest(self, x, y, region=None):
        if isinstance(self.f, Affine):
            return LinearMap(self.f.A).preimage_nearest(x, np.asarray(y) - self.f.b)
        roots, _ = self.preimage_points(y, region)
        return _nearest(x, roots)


@dataclass(frozen=True, eq=False)
class SampledGraph(SetValuedMap):
    """Finite graph: ``F(x)`` is the set of stored ``y`` paired with ``x``."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] == 0:
            raise ValueError("sampled graph must be nonempty")
        if X.shape[0] != Y.shape[0]:
            raise DimensionError("sampled graph needs as many x as y samples")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @classmethod
    def from_pairs(cls, pairs):
        X = [np.atleast_1d(np.asarray(p[0], dtype=float)) for p in pairs]
        Y = [np.atleast_1d(np.asarray(p[1], dtype=float)) for p in pairs]
        if not X:
            raise ValueError("sampled graph must be nonempty")
        return cls(np.array(X), np.array(Y))

    @property
    def pairs(self):
        return list(zip(self.X, self.Y))

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.Y.shape[1]

    def image_distances_paired(self, X, Y):
        out = np.full(len(X), INF)
        for i, (x, y) in enumerate(zip(X, Y)):
            hit = _norms(self.X - x) <= MEMBER_TOL
            if np.any(hit):
                out[i] = _norms(self.Y[hit] - y).min()
        return out

    def project_image(self, x, y):
        hit = _norms(self.X - x) <= MEMBER_TOL
        if not np.any(hit):
            return None
        cand = self.Y[hit]
        return cand[np.argmin(_norms(cand - y))]

    def preimage_distances(self, X, y, region=None):
        hit = _norms(self.Y - y) <= MEMBER_TOL
        return _dist_to_points(X, self.X[hit]), False

    def preimage_nearest(self, x, y, region=None):
        return _nearest(x, self.X[_norms(self.Y - y) <= MEMBER_TOL])


@dataclass(frozen=True, eq=False)
class SumWithFunction(SetValuedMap):
    """``x -> base(x) + f(x)``."""

    base: SetValuedMap
    f: Function
    _smooth: Optional[SetValuedMap] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if (self.f.n, self.f.m) != (self.base.n, self.base.m):
            raise DimensionError(
                f"function is {self.f.n}->{self.f.m} but mapping is {self.base.n}->{self.base.m}"
            )
        g = self._smooth_part()
        object.__setattr__(self, "_smooth", None if g is None else Smooth(g))

    @property
    def n(self):
        return self.base.n

    @property
    def m(self):
        return self.base.m

    @property
    def single_valued(self):
        return self.base.single_valued

    def value(self, x):
        return self.base.value(x) + self.f(x)

    def image_distances_paired(self, X, Y):
        X = np.asarray(X, dtype=float)
        return self.base.image_distances_paired(X, Y - self.f.eval_many(X))

    def project_image(self, x, y):
        fx = self.f(x)
        p = self.base.project_image(x, y - fx)
        return None if p is None else p + fx

    def _smooth_part(self) -> Optional[Function]:
        b = self.base
        if isinstance(b, ZeroMap):
            return self.f
        if isinstance(b, LinearMap):
            return combine(Affine(b.A, np.zeros(b.m)), self.f, 1.0)
        if isinstance(b, Smooth):
            return combine(b.f, self.f, 1.0)
        return None

    def preimage_points(self, y, region=None):
        """Located points of ``(base + f)^{-1}(y)`` and the search-limited flag."""
        y = np.asarray(y, dtype=float)
        if isinstance(self.base, NormalConeOfBox):
            roots = box_cone_roots(self.base, self.f, y, region)
            return roots, len(roots) == 0
        if isinstance(self.base, SampledGraph):
            b = self.base
            w = y - self.f.eval_many(b.X)
            return b.X[_norms(w - b.Y) <= MEMBER_TOL], False
        roots = _grid_preimage(self, y, region)
        return roots, len(roots) == 0

    def preimage_distances(self, X, y, region=None):
        if self._smooth is not None:
            return self._smooth.preimage_distances(X, y, region)
        roots, limited = self.preimage_points(y, region)
        return _dist_to_points(X, roots), limited

    def preimage_nearest(self, x, y, region=None):
        if self._smooth is not None:
            return self._smooth.preimage_nearest(x, y, region)
        roots, _ = self.preimage_points(y, region)
        return _nearest(x, roots)


def flatten_sum(F: SetValuedMap) -> SetValuedMap:
    """Collapse nested sums ``(B + f) + g`` into ``B + (f + g)``."""
    if isinstance(F, SumWithFunction) and isinstance(F.base, SumWithFunction):
        inner = flatten_sum(F.base)
        return SumWithFunction(inner.base, combine(inner.f, F.f, 1.0))
    return F


# -- root finding ------------------------------------------------------------

def _res(region: Optional[EvalRegion]) -> int:
    return region.resolution if region is not None else 21


def _search_box(region: Optional[EvalRegion], n: int):
    if region is None:
        return -np.full(n, 10.0), np.full(n, 10.0)
    return region.x_bounds()


def _dist_to_points(X, P) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if P is None or len(P) == 0:
        return np.full(X.shape[0], INF)
    P = np.atleast_2d(P)
    d = np.full(X.shape[0], INF)
    for p in P:
        d = np.minimum(d, _norms(X - p))
    return d


def _nearest(x, P) -> Optional[np.ndarray]:
    if P is None or len(P) == 0:
        return None
    P = np.atleast_2d(P)
    return P[int(np.argmin(_norms(P - np.asarray(x, dtype=float))))].copy()


def smooth_roots(h: Function, y, lo, hi, resolution: int = 21) -> np.ndarray:
    """Points ``u`` in the box ``[lo, hi]`` with ``h(u) = y`` (residual <= ROOT_TOL).

    Scalar problems are scanned densely for sign changes and near-touching
    minima, then refined with Brent's method; higher-dimensional problems
    polish the best grid candidates with bounded least squares.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if h.n == 1 and h.m == 1:
        return _scalar_roots(h, float(y[0]), float(lo[0]), float(hi[0]), resolution)
    n = h.n
    r = int(max(3, min(4 * resolution, round(20000 ** (1.0 / n)))))
    U = box_grid(lo, hi, r)
    res = _norms(h.eval_many(U) - y)
    order = np.argsort(res, kind="stable")[: min(16 * n, len(U))]
    spacing = float(np.max(hi - lo)) / (r - 1)
    roots = []
    for i in order:
        if any(np.linalg.norm(U[i] - p) < spacing for p in roots):
            continue
        sol = least_squares(
            lambda u: h(u) - y, U[i], jac=lambda u: h.jacobian(u),
            bounds=(lo, hi) if np.all(lo < hi) else (-np.inf, np.inf),
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200,
        )
        if np.linalg.norm(h(sol.x) - y) <= ROOT_TOL and np.all(sol.x >= lo - 1e-12) and np.all(sol.x <= hi + 1e-12):
            roots.append(sol.x)
    return _dedupe(roots).reshape(-1, n)


def _scalar_roots(h: Function, y: float, lo: float, hi: float, resolution: int) -> np.ndarray:
    N = max(2001, 40 * resolution + 1)
    u = np.linspace(lo, hi, N)
    g = h.eval_many(u[:, None])[:, 0] - y
    g_at = lambda t: float(h(np.array([t]))[0] - y)
    roots = list(u[np.abs(g) <= ROOT_TOL])
    s = np.sign(g)
    for i in np.flatnonzero(s[:-1] * s[1:] < 0):
        roots.append(brentq(g_at, u[i], u[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    a = np.abs(g)
    for i in range(1, N - 1):
        if a[i] <= a[i - 1] and a[i] <= a[i + 1] and a[i] > ROOT_TOL and s[i - 1] == s[i] == s[i + 1]:
            res = minimize_scalar(lambda t: abs(g_at(t)), bounds=(u[i - 1], u[i + 1]),
                                  method="bounded", options={"xatol": 1e-14})
            if abs(g_at(res.x)) <= ROOT_TOL:
                roots.append(res.x)
    roots = [r for r in roots if abs(g_at(r)) <= ROOT_TOL]
    roots.sort()
    return _dedupe([np.array([r]) for r in roots]).reshape(-1, 1)


def box_cone_roots(base: NormalConeOfBox, f: Function, y, region: Optional[EvalRegion]) -> np.ndarray:
    """Solutions of ``y in f(u) + N_C(u)`` by enumerating {lower, free, upper} patterns."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = base.n
    slo, shi = _search_box(region, n)
    lo = np.maximum(base.lower, slo)
    hi = np.minimum(base.upper, shi)
    if np.any(lo > hi):
        return np.zeros((0, n))
    found = []
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        if np.any((pattern == 1) & ~np.isfinite(base.lower)) or np.any((pattern == 2) & ~np.isfinite(base.upper)):
            continue
        fixed = np.where(pattern == 1, base.lower, np.where(pattern == 2, base.upper, np.nan))
        free = np.flatnonzero(pattern == 0)
        if np.any((pattern == 1) & ((base.lower < slo) | (base.lower > shi))):
            continue
        if np.any((pattern == 2) & ((base.upper < slo) | (base.upper > shi))):
            continue
        if free.size == 0:
            cands = [fixed.copy()]
        else:
            def embed(v, fixed=fixed, free=free):
                u = fixed.copy()
                u[free] = v
                return u

            def hf(v, embed=embed, free=free):
                return f(embed(v))[free]

            sub = CallableFunction(
                hf, free.size, free.size,
                jac=lambda v, embed=embed, free=free: f.jacobian(embed(v))[np.ix_(free, free)],
                many=lambda V, fixed=fixed, free=free: _embed_many(f, fixed, free, V),
            )
            if np.any(lo[free] >= hi[free]):
                continue
            cands = [embed(v) for v in smooth_roots(sub, y[free], lo[free], hi[free], _res(region))]
        for u in cands:
            w = y - f(u)
            if base.image_distances_paired(u[None, :], w[None, :])[0] <= 1e-9:
                found.append(u)
    return _dedupe(found).reshape(-1, n)


def _embed_many(f: Function, fixed, free, V) -> np.ndarray:
    U = np.tile(fixed, (len(V), 1))
    U[:, free] = V
    return f.eval_many(U)[:, free]


def _grid_preimage(F: SetValuedMap, y, region: Optional[EvalRegion]) -> np.ndarray:
    from scipy.optimize import minimize

    lo, hi = _search_box(region, F.n)
    r = int(max(3, min(8 * _res(region), round(20000 ** (1.0 / F.n)))))
    U = box_grid(lo, hi, r)
    res = F.image_distances_paired(U, np.broadcast_to(y, (len(U), F.m)))
    finite = np.isfinite(res)
    order = np.argsort(np.where(finite, res, np.inf), kind="stable")[:16]
    found = []
    obj = lambda u: float(F.image_distances_paired(u[None, :], np.asarray(y)[None, :])[0])
    for i in order:
        if not finite[i]:
            continue
        sol = minimize(lambda u: min(obj(u), 1e6) ** 2, U[i], method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-24, "maxiter": 4000})
        if obj(sol.x) <= MEMBER_TOL:
            found.append(sol.x)
    return _dedupe(found).reshape(-1, F.n)


# -- module-level operations --------------------------------------------------

def _check_dims(F: SetValuedMap, x, y):
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.size != F.n or y.size != F.m:
        raise DimensionError(f"mapping is R^{F.n} => R^{F.m}, got x in R^{x.size}, y in R^{y.size}")
    return x, y


def image_distance(F: SetValuedMap, x, y) -> float:
    """Residual ``d(y, F(x))``; ``INF`` when ``F(x)`` is empty."""
    x, y = _check_dims(F, x, y)
    return float(F.image_distances_paired(x[None, :], y[None, :])[0])


def preimage_distance(F: SetValuedMap, x, y, region: Optional[EvalRegion] = None,
                      return_flag: bool = False):
    """Solution distance ``d(x, F^{-1}(y))``.

    With ``return_flag`` the result is ``(distance, search_limited)``, where
    ``search_limited`` marks an ``INF`` that may be a resolution failure of
    the grid search rather than true emptiness.
    """
    x, y = _check_dims(F, x, y)
    d, flag = F.preimage_distances(x[None, :], y, region)
    d = float(d[0])
    return (d, bool(flag and d == INF)) if return_flag else d


def graph_sample(F: SetValuedMap, region: EvalRegion) -> list:
    """Graph points ``(x, y)`` over the region grid, row-major and deduplicated.

    Single-valued maps contribute ``(x, F(x))``; set-valued maps contribute
    the nearest point of ``F(x)`` to each grid ``y``. Only pairs with ``y``
    inside the region's y-box are kept.
    """
    if isinstance(F, SampledGraph):
        keep = region.in_x_box(F.X) & region.in_y_box(F.Y)
        return [(x.copy(), y.copy()) for x, y in zip(F.X[keep], F.Y[keep])]
    Xg = region.x_grid()
    pairs = []
    seen = set()

    def add(x, y):
        key = tuple(np.round(np.concatenate([x, y]), 12))
        if key not in seen and region.in_y_box(y):
            seen.add(key)
            pairs.append((x.copy(), np.asarray(y, dtype=float).copy()))

    if F.single_valued:
        for x in Xg:
            add(x, F.value(x))
    else:
        Yg = region.y_grid()
        for x in Xg:
            for y in Yg:
                p = F.project_image(x, y)
                if p is not None:
                    add(x, p)
    if image_distance(F, region.xbar, region.ybar) <= GRAPH_TOL:
        add(region.xbar, region.ybar)
    return pairs


def inverse(F: SetValuedMap) -> SetValuedMap:
    """Closed-form inverse: graph coordinates swapped."""
    if isinstance(F, LinearMap):
        I = np.eye(F.m)
        # {(y, x) : A x - y <= 0, y - A x <= 0}
        return PolyhedralGraph(np.vstack([-I, I]), np.vstack([F.A, -F.A]), np.zeros(2 * F.m))
    if isinstance(F, PolyhedralGraph):
        return PolyhedralGraph(F.B, F.A, F.c)
    if isinstance(F, SampledGraph):
        return SampledGraph(F.Y, F.X)
    raise NotInvertibleError(
        f"{type(F).__name__} is not invertible in closed form; use preimage_distance on a grid"
    )


def sum_with_function(F: SetValuedMap, f, Jf=None) -> SumWithFunction:
    """``F + f``; plain callables are wrapped with the optional Jacobian ``Jf``."""
    if not isinstance(f, Function):
        f = CallableFunction(f, F.n, F.m, jac=Jf)
    return flatten_sum(SumWithFunction(F, f))


def smooth(f: Function) -> Smooth:
    return Smooth(f)


def zero_map(n: int = 1, m: int = 1) -> ZeroMap:
    return ZeroMap(n, m)


def sampled_graph_from(F: SetValuedMap, region: EvalRegion) -> SampledGraph:
    return SampledGraph.from_pairs(graph_sample(F, region))


__all__ = [
    "EvalRegion", "SetValuedMap", "ZeroMap", "LinearMap", "PolyhedralGraph",
    "NormalConeOfBox", "Smooth", "SampledGraph", "SumWithFunction", "NotInvertibleError",
    "image_distance", "preimage_distance", "graph_sample", "inverse", "sum_with_function",
    "grid", "smooth_roots", "sampled_graph_from", "zero_function",
]
