"""Metric substrate: product distances, dual norms, polyhedral projection, excess.

Every factor space is R^n with the Euclidean norm. Products carry the
max-combination ``max(d_X, gamma * d_Y)``. The value ``INF`` stands for an
infinite distance or modulus; it is ``math.inf`` in memory and serialized as
the string ``"inf"`` (see :func:`ext_to_json`).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

INF = math.inf

#: row-count bound for exact active-set enumeration
MAX_ENUM_ROWS = 12
FEAS_TOL = 1e-9


class DimensionError(ValueError):
    """Operands have inconsistent dimensions."""


class EmptySetError(ValueError):
    """The polyhedron (or image, preimage) is empty."""


def as_vector(x, name: str = "x") -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {v.shape}")
    if v.size == 0:
        raise DimensionError(f"{name} must have positive dimension")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not (gamma > 0 and math.isfinite(gamma)):
        raise ValueError(f"gamma must be positive and finite, got {gamma}")
    return gamma


def ext_sub(a: float, b: float) -> float:
    """``a - b`` on the extended reals with ``(+inf) - (+inf) = 0``."""
    if a == INF and b == INF:
        return 0.0
    return a - b


def ext_to_json(value):
    """Replace infinite floats by the string ``"inf"`` (``"-inf"``), recursively."""
    if isinstance(value, float) or isinstance(value, np.floating):
        value = float(value)
        if value == INF:
            return "inf"
        if value == -INF:
            return "-inf"
        return value
    if isinstance(value, dict):
        return {k: ext_to_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [ext_to_json(v) for v in value]
    if isinstance(value, np.ndarray):
        return [ext_to_json(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def ext_from_json(value) -> float:
    if value == "inf":
        return INF
    if value == "-inf":
        return -INF
    return float(value)


def _pair(p) -> tuple[np.ndarray, np.ndarray]:
    u, v = p
    return as_vector(u, "u"), as_vector(v, "v")


def product_distance(p, q, gamma: float = 1.0) -> float:
    """``max(|u1 - u2|, gamma |v1 - v2|)`` for pairs ``p = (u1, v1)``, ``q = (u2, v2)``."""
    gamma = check_gamma(gamma)
    u1, v1 = _pair(p)
    u2, v2 = _pair(q)
    if u1.shape != u2.shape or v1.shape != v2.shape:
        raise DimensionError(
            f"pair dimensions differ: ({u1.size},{v1.size}) vs ({u2.size},{v2.size})"
        )
    return float(max(np.linalg.norm(u1 - u2), gamma * np.linalg.norm(v1 - v2)))


def dual_product_norm(xs, ys, gamma: float = 1.0) -> float:
    """Dual of the parametric product norm: ``|xs| + |ys| / gamma``."""
    gamma = check_gamma(gamma)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    return float(np.linalg.norm(xs) + np.linalg.norm(ys) / gamma)


@dataclass(frozen=True)
class Polyhedron:
    """The set ``{x : A x <= b}``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise DimensionError(f"A has {A.shape[0]} rows but b has length {b.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @classmethod
    def box(cls, lower, upper) -> "Polyhedron":
        lower = as_vector(lower, "lower")
        upper = as_vector(upper, "upper")
        n = lower.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    def contains(self, x, tol: float = FEAS_TOL) -> bool:
        if self.A.shape[0] == 0:
            return True
        return bool(np.all(self.A @ np.asarray(x, dtype=float) <= self.b + tol))

    def is_empty(self) -> bool:
        """Feasibility check by a phase-one LP."""
        if self.A.shape[0] == 0:
            return False
        from scipy.optimize import linprog

        res = linprog(
            np.zeros(self.dim), A_ub=self.A, b_ub=self.b,
            bounds=[(None, None)] * self.dim, method="highs",
        )
        return res.status == 2


def _equality_projection(A_S: np.ndarray, b_S: np.ndarray, x: np.ndarray):
    # nearest point of {p : A_S p = b_S}; multipliers solve A_S A_S^T lam = A_S x - b_S
    G = A_S @ A_S.T
    r = A_S @ x - b_S
    lam, *_ = np.linalg.lstsq(G, r, rcond=None)
    p = x - A_S.T @ lam
    if np.linalg.norm(A_S @ p - b_S) > 1e-8 * (1 + np.linalg.norm(b_S)):
        return None, None
    return p, lam


def project_polyhedron(P: Polyhedron, x) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``P`` by active-set enumeration.

    Candidate active sets are tried in order of increasing size; the first
    candidate satisfying the KKT conditions (primal feasibility and
    nonnegative multipliers) is the unique projection. Raises
    :class:`EmptySetError` when ``P`` is empty.
    """
    x = as_vector(x)
    if x.size != P.dim:
        raise DimensionError(f"point has dimension {x.size}, polyhedron {P.dim}")
    A, b = P.A, P.b
    k = A.shape[0]
    if k == 0 or np.all(A @ x <= b + FEAS_TOL):
        return x.copy()
    if k > MAX_ENUM_ROWS:
        return _project_qp(P, x)
    scale = 1.0 + np.abs(b).max() + np.abs(x).max()
    violated = np.flatnonzero(A @ x > b + FEAS_TOL)
    rows = range(k)
    for size in range(1, min(k, P.dim) + 1):
        for S in itertools.combinations(rows, size):
            # the optimal active set must contain at least one violated row
            if not np.any(np.isin(violated, S)):
                continue
            S = list(S)
            p, lam = _equality_projection(A[S], b[S], x)
            if p is None or np.any(lam < -1e-10 * scale):
                continue
            if np.all(A @ p <= b + FEAS_TOL * scale):
                return p
    if P.is_empty():
        raise EmptySetError("polyhedron is empty")
    # degenerate geometry (dependent active rows beyond dim); fall back to a QP solve
    return _project_qp(P, x)


def _project_qp(P: Polyhedron, x: np.ndarray) -> np.ndarray:
    from scipy.optimize import minimize

    if P.is_empty():
        raise EmptySetError("polyhedron is empty")
    cons = [{"type": "ineq", "fun": lambda p: P.b - P.A @ p, "jac": lambda p: -P.A}]
    res = minimize(
        lambda p: 0.5 * np.sum((p - x) ** 2), x, jac=lambda p: p - x,
        constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500},
    )
    return res.x


def polyhedron_distance(P: Polyhedron, x) -> float:
    """``d(x, P)``, or ``INF`` if ``P`` is empty."""
    try:
        p = project_polyhedron(P, x)
    except EmptySetError:
        return INF
    return float(np.linalg.norm(np.asarray(x, dtype=float) - p))


def excess(A: Iterable, dist_B: Callable[[np.ndarray], float], B_empty: bool = False) -> float:
    """``e(A, B) = sup_{a in A} d(a, B)``.

    ``dist_B`` evaluates the distance to ``B``. ``e(empty, B) = 0``; if ``B`` is
    empty (flag ``B_empty``) and ``A`` is not, the excess is ``INF``.
    """
    A = list(A)
    if not A:
        return 0.0
    if B_empty:
        return INF
    return float(max(dist_B(np.asarray(a, dtype=float)) for a in A))


def point_set_distance(points: Sequence) -> Callable[[np.ndarray], float]:
    """Distance oracle for a finite point set."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        return lambda x: INF

    def dist(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(np.min(np.linalg.norm(pts - x, axis=1)))

    return dist
