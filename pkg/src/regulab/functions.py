"""Single-valued function oracles ``R^n -> R^m`` with Jacobians.

Instance files describe functions in a closed, auditable format: affine
maps, or per-coordinate sums of monomials and named nonlinearities
(``sin``, ``cos``, ``sqrt_abs``, ``cube``). Arbitrary Python callables are
accepted through :class:`CallableFunction` but cannot be serialized.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

NAMED = ("sin", "cos", "sqrt_abs", "cube")


class Function:
    """Base oracle. Subclasses implement ``eval_many`` and ``jacobian``."""

    n: int
    m: int

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.eval_many(x[None, :])[0]

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} is not serializable")

    # arithmetic used by the perturbation and Newton modules
    def __add__(self, other: "Function") -> "Function":
        return combine(self, other, 1.0)

    def __sub__(self, other: "Function") -> "Function":
        return combine(self, other, -1.0)

    def scaled(self, c: float) -> "Function":
        return CallableFunction(
            lambda x: c * self(x), self.n, self.m, jac=lambda x: c * self.jacobian(x),
            many=lambda X: c * self.eval_many(X),
        )


@dataclass(frozen=True, eq=False)
class Affine(Function):
    """``x -> A x + b``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise ValueError("affine map: A rows must match b length")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.A.shape[0]

    def eval_many(self, X):
        return np.asarray(X, dtype=float) @ self.A.T + self.b

    def jacobian(self, x):
        return self.A.copy()

    def to_dict(self):
        return {"kind": "affine", "A": self.A.tolist(), "b": self.b.tolist()}


def _named(fn: str, u: np.ndarray) -> np.ndarray:
    if fn == "sin":
        return np.sin(u)
    if fn == "cos":
        return np.cos(u)
    if fn == "sqrt_abs":
        return np.sqrt(np.abs(u))
    if fn == "cube":
        return u**3
    raise ValueError(f"unknown nonlinearity {fn!r}")


def _named_deriv(fn: str, u: np.ndarray) -> np.ndarray:
    if fn == "sin":
        return np.cos(u)
    if fn == "cos":
        return -np.sin(u)
    if fn == "sqrt_abs":
        # not differentiable at 0; the zero returned there is a convention
        with np.errstate(divide="ignore"):
            d = np.sign(u) / (2.0 * np.sqrt(np.abs(u)))
        return np.where(u == 0, 0.0, d)
    if fn == "cube":
        return 3.0 * u**2
    raise ValueError(f"unknown nonlinearity {fn!r}")


@dataclass(frozen=True)
class Term:
    """``coef * prod x_j^powers[j]`` or ``coef * fn(x[var])``."""

    coef: float
    powers: Optional[tuple] = None
    fn: Optional[str] = None
    var: Optional[int] = None

    def __post_init__(self):
        if (self.powers is None) == (self.fn is None):
            raise ValueError("a term has either 'powers' or 'fn', not both")
        if self.fn is not None:
            if self.fn not in NAMED:
                raise ValueError(f"unknown nonlinearity {self.fn!r}; expected one of {NAMED}")
            if self.var is None:
                raise ValueError("named term needs 'var'")
        if self.powers is not None:
            if any(int(p) != p or p < 0 for p in self.powers):
                raise ValueError("monomial powers must be nonnegative integers")
            object.__setattr__(self, "powers", tuple(int(p) for p in self.powers))

    def value(self, X: np.ndarray) -> np.ndarray:
        if self.fn is not None:
            return self.coef * _named(self.fn, X[:, self.var])
        out = np.full(X.shape[0], float(self.coef))
        for j, p in enumerate(self.powers):
            if p:
                out = out * X[:, j] ** p
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(x.size)
        if self.fn is not None:
            g[self.var] = self.coef * _named_deriv(self.fn, x[self.var : self.var + 1])[0]
            return g
        for j, p in enumerate(self.powers):
            if p == 0:
                continue
            val = self.coef * p * x[j] ** (p - 1)
            for i, r in enumerate(self.powers):
                if i != j and r:
                    val *= x[i] ** r
            g[j] = val
        return g

    def to_dict(self):
        if self.fn is not None:
            return {"coef": self.coef, "fn": self.fn, "var": self.var}
        return {"coef": self.coef, "powers": list(self.powers)}


@dataclass(frozen=True, eq=False)
class TermFunction(Function):
    """Coordinate ``i`` of the output is ``sum(t.value(x) for t in components[i])``."""

    n: int
    components: tuple

    def __post_init__(self):
        comps = tuple(tuple(c) for c in self.components)
        for terms in comps:
            for t in terms:
                if t.fn is not None and not 0 <= t.var < self.n:
                    raise ValueError(f"term variable {t.var} out of range for n={self.n}")
                if t.powers is not None and len(t.powers) != self.n:
                    raise ValueError(f"monomial needs {self.n} powers, got {len(t.powers)}")
        object.__setattr__(self, "components", comps)

    @property
    def m(self):
        return len(self.components)

    def eval_many(self, X):
        X = np.asarray(X, dtype=float)
        out = np.zeros((X.shape[0], self.m))
        for i, terms in enumerate(self.components):
            for t in terms:
                out[:, i] += t.value(X)
        return out

    def jacobian(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        J = np.zeros((self.m, self.n))
        for i, terms in enumerate(self.components):
            for t in terms:
                J[i] += t.grad(x)
        return J

    def to_dict(self):
        return {
            "kind": "terms",
            "n": self.n,
            "components": [[t.to_dict() for t in terms] for terms in self.components],
        }


class CallableFunction(Function):
    """Wraps a Python callable. ``jac`` defaults to central finite differences."""

    def __init__(self, f: Callable, n: int, m: int, jac: Optional[Callable] = None,
                 many: Optional[Callable] = None):
        self._f = f
        self._jac = jac
        self._many = many
        self.n = int(n)
        self.m = int(m)

    def __call__(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.atleast_1d(np.asarray(self._f(x), dtype=float))

    def eval_many(self, X):
        X = np.asarray(X, dtype=float)
        if self._many is not None:
            return np.asarray(self._many(X), dtype=float).reshape(X.shape[0], self.m)
        return np.array([self(x) for x in X]).reshape(X.shape[0], self.m)

    def jacobian(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self._jac is not None:
            return np.atleast_2d(np.asarray(self._jac(x), dtype=float)).reshape(self.m, self.n)
        return finite_difference_jacobian(self, x)


def combine(f: Function, g: Function, sign: float) -> Function:
    """``f + sign * g``; stays serializable when both operands are."""
    if (f.n, f.m) != (g.n, g.m):
        raise ValueError(f"cannot combine {f.n}->{f.m} with {g.n}->{g.m}")
    if isinstance(f, Affine) and isinstance(g, Affine):
        return Affine(f.A + sign * g.A, f.b + sign * g.b)
    ft, gt = as_terms(f), as_terms(g)
    if ft is not None and gt is not None:
        comps = []
        for a, b in zip(ft.components, gt.components):
            comps.append(tuple(a) + tuple(Term(sign * t.coef, t.powers, t.fn, t.var) for t in b))
        return TermFunction(f.n, tuple(comps))
    return CallableFunction(
        lambda x: f(x) + sign * g(x), f.n, f.m,
        jac=lambda x: f.jacobian(x) + sign * g.jacobian(x),
        many=lambda X: f.eval_many(X) + sign * g.eval_many(X),
    )


def as_terms(f: Function) -> Optional[TermFunction]:
    """Rewrite an affine map as a term function; None for opaque callables."""
    if isinstance(f, TermFunction):
        return f
    if isinstance(f, Affine):
        comps = []
        for i in range(f.m):
            terms = [Term(float(f.b[i]), (0,) * f.n)] if f.b[i] != 0 else []
            for j in range(f.n):
                if f.A[i, j] != 0:
                    p = [0] * f.n
                    p[j] = 1
                    terms.append(Term(float(f.A[i, j]), tuple(p)))
            comps.append(tuple(terms))
        return TermFunction(f.n, tuple(comps))
    return None


def zero_function(n: int, m: int) -> Affine:
    return Affine(np.zeros((m, n)), np.zeros(m))


def linear(A) -> Affine:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return Affine(A, np.zeros(A.shape[0]))


def scalar_poly(coeffs: Sequence[float]) -> TermFunction:
    """Univariate polynomial ``sum coeffs[k] * u^k``."""
    terms = tuple(Term(float(c), (k,)) for k, c in enumerate(coeffs) if c != 0)
    return TermFunction(1, (terms,))


def affine_model(f: Function, xbar) -> Affine:
    """``x -> f(xbar) + J(xbar) (x - xbar)``."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    J = f.jacobian(xbar)
    return Affine(J, f(xbar) - J @ xbar)


def finite_difference_jacobian(f: Callable, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        cols.append((np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * e[j]))
    return np.column_stack(cols)


def check_jacobian(f: Function, points, rtol: float = 1e-5) -> float:
    """Max relative error between ``f.jacobian`` and central differences at ``points``."""
    worst = 0.0
    for x in points:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        J = f.jacobian(x)
        Jfd = finite_difference_jacobian(f, x)
        err = np.abs(J - Jfd).max() / max(1.0, np.abs(Jfd).max())
        worst = max(worst, float(err))
    return worst


def function_from_dict(d: dict) -> Function:
    kind = d.get("kind")
    if kind == "affine":
        _strict(d, {"kind", "A", "b"}, "affine function")
        return Affine(d["A"], d["b"])
    if kind == "terms":
        _strict(d, {"kind", "n", "components"}, "terms function")
        comps = []
        for terms in d["components"]:
            row = []
            for t in terms:
                _strict(t, {"coef", "powers", "fn", "var"}, "term", required={"coef"})
                row.append(Term(float(t["coef"]), tuple(t["powers"]) if "powers" in t else None,
                                t.get("fn"), t.get("var")))
            comps.append(tuple(row))
        return TermFunction(int(d["n"]), tuple(comps))
    raise ValueError(f"unknown function kind {kind!r}")


def _strict(d: dict, allowed: set, what: str, required: Optional[set] = None):
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown field(s) {sorted(unknown)} in {what}")
    missing = (allowed if required is None else required) - set(d)
    if missing:
        raise ValueError(f"missing field(s) {sorted(missing)} in {what}")
