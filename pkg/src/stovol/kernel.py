"""Volterra kernels H(t,s) on the triangle 0 <= s <= t and coefficient functions.

A kernel is evaluated for a fixed outer time t against a vector of inner
times s (the shape every integral in this package consumes).  The three
built-in families carry their known analytic structure:

* additive        H(t,s) = H_inf(s) + H_sharp(t)
* multiplicative  H(t,s) = H_inf(s) * H_sharp(t)
* exponential     H(t,s) = exp(-lam*(t-s)) * sigma(s), limit identically 0,
                  time derivative -lam*H, diagonal H(t,t) = sigma(t)

plus fully custom kernels assembled from expression strings.  Matrix
kernels are stored entrywise and all norms downstream are Frobenius.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from . import exprlang
from .exprlang import Expr

__all__ = [
    "BoundedFunction",
    "Kernel",
    "KernelError",
    "OutsideDomainError",
    "DimensionMismatchError",
    "NonPositiveLambdaError",
    "D1InconsistencyWarning",
    "HolderScan",
    "make_additive",
    "make_multiplicative",
    "make_exponential",
    "make_custom",
    "counterexample_h_sharp",
    "holder_constant_scan",
    "frobenius_sq",
]


class KernelError(Exception):
    """Base class for kernel construction/evaluation errors."""


class OutsideDomainError(KernelError):
    """Kernel evaluated outside the triangle 0 <= s <= t."""


class DimensionMismatchError(KernelError):
    pass


class NonPositiveLambdaError(KernelError):
    pass


class D1InconsistencyWarning(UserWarning):
    """A supplied time derivative disagrees with finite differences."""


def frobenius_sq(a: np.ndarray) -> np.ndarray:
    """Squared Frobenius norm over the trailing two (matrix) axes."""
    return np.sum(a * a, axis=(-2, -1))


# --- coefficient functions ---------------------------------------------------


@dataclass(frozen=True)
class BoundedFunction:
    """Matrix-valued function of one time variable with a known sup bound.

    ``fn`` maps a 1-d array of times u >= 0 to an array of shape
    (len(u), rows, cols).  Houses f(s) as well as scalar sigma(s),
    H_sharp(t) and H_inf(s) instances (rows = cols = 1).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    dims: tuple[int, int] = (1, 1)
    sup_bound: float | None = None
    constant_value: np.ndarray | None = None
    label: str = "f"

    @property
    def is_scalar(self) -> bool:
        return self.dims == (1, 1)

    def __call__(self, u) -> np.ndarray:
        scalar_in = np.isscalar(u) or (isinstance(u, np.ndarray) and u.ndim == 0)
        arr = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(arr < 0.0):
            raise OutsideDomainError(f"{self.label} evaluated at negative time {arr.min()}")
        out = np.asarray(self.fn(arr), dtype=float)
        expected = (arr.size,) + self.dims
        if out.shape != expected:
            raise DimensionMismatchError(
                f"{self.label} returned shape {out.shape}, expected {expected}")
        if not np.all(np.isfinite(out)):
            raise KernelError(f"{self.label} is not finite at some of the sampled times")
        return out[0] if scalar_in else out

    def value(self, u: float) -> float:
        """Scalar value for 1x1 functions."""
        if not self.is_scalar:
            raise DimensionMismatchError(f"{self.label} is not scalar")
        return float(self(u)[0, 0])

    def check_sup_bound(self, times: np.ndarray, tol: float = 1e-9) -> bool:
        """Verify ||f(u)||_F <= sup_bound*(1+tol) at the sampled times."""
        if self.sup_bound is None:
            return True
        norms = np.sqrt(frobenius_sq(self(np.asarray(times, dtype=float))))
        return bool(np.all(norms <= self.sup_bound * (1.0 + tol)))

    @staticmethod
    def constant(value, dims: tuple[int, int] = (1, 1), label: str | None = None) -> "BoundedFunction":
        mat = np.broadcast_to(np.asarray(value, dtype=float), dims).copy()

        def fn(u: np.ndarray) -> np.ndarray:
            return np.broadcast_to(mat, (u.size,) + dims)

        return BoundedFunction(
            fn=fn, dims=dims, sup_bound=float(np.sqrt(np.sum(mat * mat))),
            constant_value=mat, label=label or f"const({value})")

    @staticmethod
    def zero(dims: tuple[int, int] = (1, 1), label: str = "0") -> "BoundedFunction":
        return BoundedFunction.constant(0.0, dims, label=label)

    @staticmethod
    def from_scalar(fn: Callable[[np.ndarray], np.ndarray], sup_bound: float | None = None,
                    label: str = "f") -> "BoundedFunction":
        """Wrap a vectorized scalar function u -> values of the same shape."""

        def wrapped(u: np.ndarray) -> np.ndarray:
            return np.asarray(fn(u), dtype=float).reshape(u.size, 1, 1)

        return BoundedFunction(fn=wrapped, sup_bound=sup_bound, label=label)

    @staticmethod
    def from_expr(source: str | Expr, sup_bound: float | None = None,
                  label: str | None = None) -> "BoundedFunction":
        """Build a scalar function from an expression in one time variable."""
        e = exprlang.parse(source) if isinstance(source, str) else source
        used = exprlang.variables(e)
        if len(used) > 1:
            raise DimensionMismatchError(
                f"single-variable function uses both variables: {sorted(used)}")
        var = next(iter(used)) if used else "t"

        def fn(u: np.ndarray) -> np.ndarray:
            val = exprlang.evaluate(e, t=u if var == "t" else None,
                                    s=u if var == "s" else None)
            return np.broadcast_to(np.asarray(val, dtype=float), u.shape).reshape(u.size, 1, 1)

        text = label if label is not None else (source if isinstance(source, str) else exprlang.pretty(e))
        return BoundedFunction(fn=fn, sup_bound=sup_bound, label=text)


# --- kernels -----------------------------------------------------------------


@dataclass(frozen=True)
class Kernel:
    """Volterra kernel on the triangle, with optional limit and t-derivative.

    ``fn(t, s)`` maps a scalar t and a 1-d array s (all in [0, t]) to an
    array (len(s), n, n); ``d1`` has the same signature and houses the
    partial derivative in t; ``diag_fn(s)`` evaluates H(s,s) vectorized.
    ``closed_forms`` maps functional tags to analytic callables used as
    quadrature oracles.
    """

    fn: Callable[[float, np.ndarray], np.ndarray]
    diag_fn: Callable[[np.ndarray], np.ndarray]
    n: int = 1
    limit: BoundedFunction | None = None
    d1: Callable[[float, np.ndarray], np.ndarray] | None = None
    closed_forms: Mapping[str, Callable] = field(default_factory=dict)
    family: str = "custom"
    label: str = "H"

    @property
    def dims(self) -> tuple[int, int]:
        return (self.n, self.n)

    def _check_domain(self, t: float, s: np.ndarray) -> None:
        if t < 0.0 or np.any(s < 0.0) or np.any(s > t):
            raise OutsideDomainError(
                f"kernel {self.label} evaluated outside 0 <= s <= t (t={t})")

    def eval_many(self, t: float, s) -> np.ndarray:
        """H(t, s_i) for every s_i; shape (len(s), n, n)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        self._check_domain(float(t), s)
        out = np.asarray(self.fn(float(t), s), dtype=float)
        if not np.all(np.isfinite(out)):
            raise KernelError(f"kernel {self.label} is not finite inside the domain")
        return out

    def eval(self, t: float, s: float) -> np.ndarray:
        """Single-point value, shape (n, n)."""
        return self.eval_many(t, [s])[0]

    def d1_many(self, t: float, s) -> np.ndarray:
        if self.d1 is None:
            raise KernelError(f"kernel {self.label} has no time derivative")
        s = np.atleast_1d(np.asarray(s, dtype=float))
        self._check_domain(float(t), s)
        return np.asarray(self.d1(float(t), s), dtype=float)

    def diag(self, s) -> np.ndarray:
        """H(s,s) for every entry of s; shape (len(s), n, n)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < 0.0):
            raise OutsideDomainError("diagonal evaluated at negative time")
        return np.asarray(self.diag_fn(s), dtype=float)

    def with_closed_forms(self, **forms: Callable) -> "Kernel":
        merged = dict(self.closed_forms)
        merged.update(forms)
        return replace(self, closed_forms=merged)


def _require_scalar(*funcs: BoundedFunction) -> None:
    for f in funcs:
        if not f.is_scalar:
            raise DimensionMismatchError(f"{f.label} must be scalar (1x1), got {f.dims}")


def make_additive(h_inf: BoundedFunction, h_sharp: BoundedFunction,
                  h_sharp_d1: BoundedFunction | None = None) -> Kernel:
    """Kernel H(t,s) = H_inf(s) + H_sharp(t) with limit H_inf."""
    _require_scalar(h_inf, h_sharp)

    def fn(t: float, s: np.ndarray) -> np.ndarray:
        return h_inf(s) + h_sharp(np.array([t]))[0]

    d1 = None
    if h_sharp_d1 is not None:
        _require_scalar(h_sharp_d1)

        def d1(t: float, s: np.ndarray) -> np.ndarray:  # noqa: F811
            return np.broadcast_to(h_sharp_d1(np.array([t]))[0], (s.size, 1, 1)).copy()

    return Kernel(
        fn=fn,
        diag_fn=lambda s: h_inf(s) + h_sharp(s),
        limit=h_inf,
        d1=d1,
        family="additive",
        label=f"{h_inf.label}+{h_sharp.label}",
    )


def make_multiplicative(h_inf: BoundedFunction, h_sharp: BoundedFunction,
                        h_sharp_d1: BoundedFunction | None = None) -> Kernel:
    """Kernel H(t,s) = H_inf(s) * H_sharp(t); limit field is H_inf.

    Whether H_inf is the true L2 limit depends on H_sharp(t) -> 1, which
    the criterion checkers decide; the limit field is always set.
    """
    _require_scalar(h_inf, h_sharp)

    def fn(t: float, s: np.ndarray) -> np.ndarray:
        return h_inf(s) * h_sharp(np.array([t]))[0]

    d1 = None
    if h_sharp_d1 is not None:
        _require_scalar(h_sharp_d1)

        def d1(t: float, s: np.ndarray) -> np.ndarray:  # noqa: F811
            return h_inf(s) * h_sharp_d1(np.array([t]))[0]

    return Kernel(
        fn=fn,
        diag_fn=lambda s: h_inf(s) * h_sharp(s),
        limit=h_inf,
        d1=d1,
        family="multiplicative",
        label=f"{h_inf.label}*{h_sharp.label}",
    )


def make_exponential(sigma: BoundedFunction, lam: float = 1.0) -> Kernel:
    """Kernel H(t,s) = exp(-lam*(t-s)) * sigma(s).

    The limit is identically zero, the time derivative is -lam*H and the
    diagonal is sigma(t).  For constant sigma the squared-mass integrals
    have closed forms, registered as quadrature oracles.
    """
    _require_scalar(sigma)
    if not lam > 0.0:
        raise NonPositiveLambdaError(f"decay rate must be positive, got {lam}")

    def fn(t: float, s: np.ndarray) -> np.ndarray:
        return np.exp(-lam * (t - s)).reshape(s.size, 1, 1) * sigma(s)

    def d1(t: float, s: np.ndarray) -> np.ndarray:
        return -lam * fn(t, s)

    forms: dict[str, Callable] = {"limit_tail": lambda t: 0.0}
    if sigma.constant_value is not None:
        c2 = float(sigma.constant_value[0, 0]) ** 2

        def sq_mass(t: float) -> float:
            return c2 * (1.0 - np.exp(-2.0 * lam * t)) / (2.0 * lam)

        forms.update(
            squared_mass=sq_mass,
            l2_distance=sq_mass,
            tail_mass=lambda T, t: c2 * (1.0 - np.exp(-2.0 * lam * (t - T))) / (2.0 * lam),
            derivative_mass=lambda t: lam * lam * sq_mass(t),
            diagonal_mass=lambda a, b: c2 * (b - a),
        )

    return Kernel(
        fn=fn,
        diag_fn=lambda s: sigma(s),
        limit=BoundedFunction.zero(label="0"),
        d1=d1,
        closed_forms=forms,
        family="exponential",
        label=f"exp(-{lam}(t-s))*{sigma.label}",
    )


def _parse_entries(spec, n: int, what: str) -> list[list[Expr]]:
    """Normalize an entrywise expression spec into an n x n grid of ASTs."""
    if isinstance(spec, (str, exprlang.Num, exprlang.Var, exprlang.Neg,
                         exprlang.BinOp, exprlang.Call)):
        if n != 1:
            raise DimensionMismatchError(f"{what}: single expression given for dims {n}x{n}")
        spec = [[spec]]
    rows = list(spec)
    if len(rows) != n or any(len(r) != n for r in rows):
        raise DimensionMismatchError(f"{what}: expected {n}x{n} entries")
    return [[exprlang.parse(e) if isinstance(e, str) else e for e in row] for row in rows]


def make_custom(h, h_inf=None, d1=None, dims: tuple[int, int] = (1, 1),
                label: str | None = None) -> Kernel:
    """Kernel from entrywise expressions over (t, s).

    ``h`` (and optional ``h_inf`` over s, ``d1`` over (t,s)) are either a
    single expression (scalar kernel) or an n x n nested list.  When a
    derivative is supplied it is sanity-checked against finite differences
    at 16 random interior points on first use; disagreement logs a
    D1InconsistencyWarning but does not fail (the check tolerance is 10*h
    with step h=1e-3).
    """
    if dims[0] != dims[1]:
        raise DimensionMismatchError(f"kernel must be square, got {dims}")
    n = dims[0]
    h_ast = _parse_entries(h, n, "h")
    d1_ast = _parse_entries(d1, n, "d1") if d1 is not None else None

    def assemble(entries: list[list[Expr]], t, s: np.ndarray) -> np.ndarray:
        out = np.empty((s.size, n, n), dtype=float)
        for i in range(n):
            for j in range(n):
                val = exprlang.evaluate(entries[i][j], t=t, s=s)
                out[:, i, j] = np.broadcast_to(np.asarray(val, dtype=float), s.shape)
        return out

    def fn(t: float, s: np.ndarray) -> np.ndarray:
        return assemble(h_ast, t, s)

    def diag_fn(s: np.ndarray) -> np.ndarray:
        return assemble(h_ast, s, s)

    limit = None
    if h_inf is not None:
        if isinstance(h_inf, BoundedFunction):
            limit = h_inf
        else:
            inf_ast = _parse_entries(h_inf, n, "h_inf")
            limit = BoundedFunction(
                fn=lambda u: assemble(inf_ast, u, u), dims=(n, n), label="H_inf")

    d1_fn = None
    if d1_ast is not None:
        checked = {"done": False}

        def d1_fn(t: float, s: np.ndarray) -> np.ndarray:  # noqa: F811
            if not checked["done"]:
                checked["done"] = True
                _finite_difference_check(fn, lambda u, v: assemble(d1_ast, u, v), t, label or "custom")
            return assemble(d1_ast, t, s)

    kern = Kernel(fn=fn, diag_fn=diag_fn, n=n, limit=limit, d1=d1_fn,
                  family="custom", label=label or "custom")
    return kern


def _finite_difference_check(fn, d1_fn, t_seen: float, label: str,
                             h: float = 1e-3, n_points: int = 16) -> None:
    rng = np.random.default_rng(7)
    t_hi = max(float(t_seen), 1.0)
    worst = 0.0
    for _ in range(n_points):
        t = rng.uniform(h, t_hi)
        s = np.array([rng.uniform(0.0, t)])
        fd = (fn(t + h, s) - fn(t, s)) / h
        worst = max(worst, float(np.max(np.abs(d1_fn(t, s) - fd))))
    if worst > 10.0 * h:
        warnings.warn(
            f"supplied d1 for kernel {label} deviates from finite differences "
            f"by {worst:.3g} (tolerance {10*h:.3g})",
            D1InconsistencyWarning,
            stacklevel=3,
        )


_COUNTEREXAMPLE_SUP = 1.0 / np.sqrt(np.log(np.log(3.0)))


def counterexample_h_sharp() -> BoundedFunction:
    """Interpolated factor pinned to 1/sqrt(n*loglog(n+2)) at integers n >= 1.

    Defined as 1/sqrt(t*loglog(t+2)) for t >= 1 and frozen at its t=1
    value on [0,1) so the function is continuous and bounded.  Satisfies
    sqrt(t)*value -> 0 while sqrt(t*loglog t)*value -> 1.
    """

    def fn(u: np.ndarray) -> np.ndarray:
        v = np.maximum(u, 1.0)
        return (1.0 / np.sqrt(v * np.log(np.log(v + 2.0)))).reshape(u.size, 1, 1)

    return BoundedFunction(fn=fn, sup_bound=float(_COUNTEREXAMPLE_SUP),
                           label="1/sqrt(t*loglog(t+2))")


@dataclass(frozen=True)
class HolderScan:
    """Sampled Hoelder-constant surrogate K(s) and its squared mass.

    K(s) approximates the best constant in |H(t2,s)-H(t1,s)| <=
    K(s)*(t2-t1)^alpha over sampled t pairs; numerical evidence only,
    never a proof.
    """

    s_values: np.ndarray
    k_values: np.ndarray
    k2_integral: float
    alpha: float
    t_max: float


def holder_constant_scan(k: Kernel, t_max: float, alpha: float, g,
                         max_s_samples: int = 48, max_t_samples: int = 48) -> HolderScan:
    """Scan max_{t1<t2} ||H(t2,s)-H(t1,s)||_F/(t2-t1)^alpha over grid samples."""
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if t_max <= 0.0 or t_max > g.t_max + 1e-12:
        raise ValueError("scan horizon must lie inside the grid")
    nodes = g.nodes
    in_range = nodes[nodes <= t_max + 1e-12]
    s_vals = _subsample(in_range[:-1], max_s_samples)
    k_vals = np.empty(s_vals.size)
    for idx, s in enumerate(s_vals):
        ts = _subsample(in_range[in_range >= s - 1e-12], max_t_samples)
        vals = np.stack([k.eval_many(t, np.array([s]))[0] for t in ts])
        diffs = np.sqrt(frobenius_sq(vals[None, :] - vals[:, None]))
        gaps = ts[None, :] - ts[:, None]
        upper = gaps > 0
        k_vals[idx] = float(np.max(diffs[upper] / gaps[upper] ** alpha)) if upper.any() else 0.0
    k2 = float(np.trapezoid(k_vals**2, s_vals)) if s_vals.size > 1 else 0.0
    return HolderScan(s_values=s_vals, k_values=k_vals, k2_integral=k2,
                      alpha=alpha, t_max=t_max)


def _subsample(values: np.ndarray, limit: int) -> np.ndarray:
    if values.size <= limit:
        return values
    idx = np.unique(np.linspace(0, values.size - 1, limit).round().astype(int))
    return values[idx]
