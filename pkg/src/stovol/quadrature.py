"""Deterministic quadrature of the kernel functionals the criteria consume.

Everything integrates with the composite trapezoid rule on a uniform grid
(second order, exactly interval-additive at nodes), with closed-form
oracles consulted from the kernel's registry where the example families
admit them.  Squared norms are Frobenius throughout.  All t -> infinity
statements downstream are finite-horizon trends; nothing here claims a
limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np

from ._io import atomic_write_text, csv_text, fmt, json_dumps
from .kernel import BoundedFunction, Kernel, frobenius_sq

__all__ = [
    "Grid",
    "IntegralCurve",
    "TailMass",
    "MissingLimitError",
    "MissingDerivativeError",
    "geometric_times",
    "l2_distance_to_limit",
    "limit_tail_mass",
    "tail_mass",
    "compact_distance",
    "log_weighted_distance",
    "derivative_mass",
    "diagonal_mass",
    "isometry_prediction",
    "weighted_distance_mass",
    "interval_trapz",
]


class MissingLimitError(Exception):
    """Operation requires a kernel with a registered limit function."""


class MissingDerivativeError(Exception):
    """Operation requires a kernel with a registered time derivative."""


def geometric_times(t0: float, rho: float, t_max: float) -> np.ndarray:
    """Geometric evaluation ladder t0 * rho^k truncated at t_max."""
    if t0 <= 0 or rho <= 1.0:
        raise ValueError("need t0 > 0 and rho > 1")
    out = []
    t = t0
    while t <= t_max * (1 + 1e-12):
        out.append(min(t, t_max))
        t *= rho
    return np.asarray(out)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform time grid: nodes j*dt for j = 0..n_cells, plus eval times.

    Eval times are a sorted subset of the nodes (snapped on construction).
    t_max is n_cells*dt by definition, so that identity holds exactly in
    floating point.
    """

    dt: float
    n_cells: int
    eval_times: np.ndarray

    @staticmethod
    def regular(dt: float, t_max: float, eval_times=None,
                t0: float = 2.0, rho: float = 1.5) -> "Grid":
        """Build a grid; default eval times form the geometric ladder."""
        if dt <= 0.0:
            raise ValueError(f"dt must be positive, got {dt}")
        ratio = t_max / dt
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
            raise ValueError(f"t_max={t_max} is not an integer multiple of dt={dt}")
        g = Grid(dt=float(dt), n_cells=n, eval_times=np.array([n * dt]))
        if eval_times is None:
            ladder = geometric_times(t0, rho, g.t_max)
            eval_times = ladder if ladder.size else [g.t_max]
        return g.with_eval_times(eval_times)

    @property
    def t_max(self) -> float:
        return self.n_cells * self.dt

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.dt

    @property
    def cell_left_times(self) -> np.ndarray:
        return self.nodes[:-1]

    def node_index(self, t: float, snap: bool = False) -> int:
        """Index of the node at (or nearest to, with snap=True) time t."""
        i = int(round(t / self.dt))
        i = min(max(i, 0), self.n_cells)
        if not snap and abs(i * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a node of the grid (dt={self.dt})")
        return i

    def with_eval_times(self, times) -> "Grid":
        idx = sorted({self.node_index(float(t), snap=True) for t in np.atleast_1d(times)})
        if not idx:
            raise ValueError("eval_times must be non-empty")
        return replace(self, eval_times=np.asarray(idx) * self.dt)

    def with_geometric_eval_times(self, t0: float = 2.0, rho: float = 1.5) -> "Grid":
        ladder = geometric_times(t0, rho, self.t_max)
        return self.with_eval_times(ladder if ladder.size else [self.t_max])

    def describe(self) -> dict:
        return {"dt": self.dt, "n_cells": self.n_cells, "t_max": self.t_max,
                "eval_times": [float(t) for t in self.eval_times]}


@dataclass(frozen=True)
class IntegralCurve:
    """A functional sampled along eval times, with provenance metadata."""

    times: np.ndarray
    values: np.ndarray
    tag: str
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape:
            raise ValueError("times and values must have matching shapes")
        if t.size and np.any(np.diff(t) <= 0.0):
            raise ValueError("curve times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"curve {self.tag} contains non-finite values")

    def to_json(self) -> str:
        return json_dumps({
            "tag": self.tag,
            "metadata": dict(self.metadata),
            "points": [[float(t), float(v)] for t, v in zip(self.times, self.values)],
        })

    def write_csv(self, path: str) -> None:
        atomic_write_text(path, csv_text(("t", "value"), zip(self.times, self.values)))

    def last(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class TailMass:
    """Integral of ||H_inf||^2 from t onward; truncated marks a missing
    analytic tail beyond the grid horizon."""

    value: float
    truncated: bool


def _trapz(values: np.ndarray, dt: float) -> float:
    if values.size < 2:
        return 0.0
    return float(np.trapezoid(values, dx=dt))


def _require_limit(k: Kernel) -> BoundedFunction:
    if k.limit is None:
        raise MissingLimitError(f"kernel {k.label} has no limit function")
    return k.limit


def _limit_on_nodes(k: Kernel, g: Grid) -> np.ndarray:
    return _require_limit(k)(g.nodes)


def _distance_sq(k: Kernel, h_inf_nodes: np.ndarray, t: float, g: Grid,
                 lo: int = 0, hi: int | None = None) -> np.ndarray:
    """||H(t,s)-H_inf(s)||_F^2 on nodes[lo:hi+1] for fixed t."""
    hi = g.node_index(t) if hi is None else hi
    s = g.nodes[lo:hi + 1]
    return frobenius_sq(k.eval_many(t, s) - h_inf_nodes[lo:hi + 1])


def l2_distance_to_limit(k: Kernel, g: Grid) -> IntegralCurve:
    """D(t) = integral over [0,t] of ||H(t,s)-H_inf(s)||_F^2 ds."""
    h_inf = _limit_on_nodes(k, g)
    values = [_trapz(_distance_sq(k, h_inf, t, g), g.dt) for t in g.eval_times]
    return IntegralCurve(times=g.eval_times, values=np.asarray(values),
                         tag="l2_distance_to_limit",
                         metadata={"kernel": k.label, "dt": g.dt, "t_max": g.t_max})


def limit_tail_mass(k: Kernel, g: Grid, t: float) -> TailMass:
    """Integral of ||H_inf||_F^2 over [t, t_max], plus any registered
    analytic tail beyond t_max."""
    if t > g.t_max * (1 + 1e-12):
        raise ValueError(f"t={t} exceeds the grid horizon {g.t_max}")
    h_inf = _limit_on_nodes(k, g)
    j = g.node_index(t)
    value = _trapz(frobenius_sq(h_inf[j:]), g.dt)
    tail = k.closed_forms.get("limit_tail")
    if tail is not None:
        return TailMass(value=value + float(tail(g.t_max)), truncated=False)
    return TailMass(value=value, truncated=True)


def tail_mass(k: Kernel, g: Grid, big_t: float, t: float) -> float:
    """Integral of ||H(t,s)||_F^2 over s in [big_t, t]."""
    if big_t > t:
        raise ValueError(f"need T <= t, got T={big_t} > t={t}")
    lo, hi = g.node_index(big_t), g.node_index(t)
    s = g.nodes[lo:hi + 1]
    return _trapz(frobenius_sq(k.eval_many(t, s)), g.dt)


def compact_distance(k: Kernel, g: Grid, big_t: float, t: float) -> float:
    """Integral of ||H(t,s)-H_inf(s)||_F^2 over the compact window [0, T]."""
    if big_t > t:
        raise ValueError(f"need T <= t, got T={big_t} > t={t}")
    h_inf = _limit_on_nodes(k, g)
    return _trapz(_distance_sq(k, h_inf, t, g, hi=g.node_index(big_t)), g.dt)


def log_weighted_distance(k: Kernel, g: Grid) -> IntegralCurve:
    """D(t) * log t along eval times; times t <= 1 are skipped and flagged."""
    base = l2_distance_to_limit(k, g)
    keep = base.times > 1.0
    skipped = [float(t) for t in base.times[~keep]]
    if not keep.any():
        raise ValueError("no eval times exceed 1; log weighting undefined")
    meta = dict(base.metadata)
    meta["skipped_times"] = skipped
    return IntegralCurve(times=base.times[keep],
                         values=base.values[keep] * np.log(base.times[keep]),
                         tag="log_weighted_distance", metadata=meta)


def derivative_mass(k: Kernel, g: Grid) -> IntegralCurve:
    """Integral over [0,t] of ||H_1(t,s)||_F^2 ds along eval times."""
    if k.d1 is None:
        raise MissingDerivativeError(f"kernel {k.label} has no time derivative")
    values = []
    for t in g.eval_times:
        s = g.nodes[:g.node_index(t) + 1]
        values.append(_trapz(frobenius_sq(k.d1_many(t, s)), g.dt))
    return IntegralCurve(times=g.eval_times, values=np.asarray(values),
                         tag="derivative_mass",
                         metadata={"kernel": k.label, "dt": g.dt, "t_max": g.t_max})


def interval_trapz(nodes: np.ndarray, values: np.ndarray, a: float, b: float,
                   dt: float) -> float:
    """Trapezoid of a node-sampled integrand over [a, b].

    Off-grid endpoints use linear interpolation of the integrand between
    the surrounding nodes (partial-cell trapezoid).
    """
    if b < a:
        raise ValueError(f"need a <= b, got a={a} > b={b}")
    if b == a:
        return 0.0
    eps = 1e-12 * max(1.0, abs(b))

    def interp(x: float) -> float:
        j = min(int(x / dt), values.size - 2)
        frac = x / dt - j
        return float(values[j] * (1.0 - frac) + values[j + 1] * frac)

    i_lo = int(np.ceil(a / dt - eps / dt))
    i_hi = int(np.floor(b / dt + eps / dt))
    i_lo = max(i_lo, 0)
    i_hi = min(i_hi, values.size - 1)
    if i_lo > i_hi:  # both endpoints inside one cell
        return 0.5 * (interp(a) + interp(b)) * (b - a)
    total = _trapz(values[i_lo:i_hi + 1], dt)
    left_gap = i_lo * dt - a
    if left_gap > eps:
        total += 0.5 * (interp(a) + values[i_lo]) * left_gap
    right_gap = b - i_hi * dt
    if right_gap > eps:
        total += 0.5 * (values[i_hi] + interp(b)) * right_gap
    return float(total)


def diagonal_mass(k: Kernel, a: float, b: float, g: Grid) -> float:
    """Integral of ||H(s,s)||_F^2 over [a, b] with endpoint snapping."""
    if not (0.0 <= a <= b <= g.t_max * (1 + 1e-12)):
        raise ValueError(f"need 0 <= a <= b <= t_max, got a={a}, b={b}")
    diag_sq = frobenius_sq(k.diag(g.nodes))
    return interval_trapz(g.nodes, diag_sq, a, min(b, g.t_max), g.dt)


def _weighted_distance_sq(k: Kernel, h_inf_nodes: np.ndarray, f_nodes: np.ndarray,
                          t: float, g: Grid) -> np.ndarray:
    """||(H(t,s)-H_inf(s)) f(s)||_F^2 on nodes[0..t]."""
    hi = g.node_index(t)
    s = g.nodes[:hi + 1]
    diff = k.eval_many(t, s) - h_inf_nodes[:hi + 1]
    return frobenius_sq(np.einsum("kij,kjd->kid", diff, f_nodes[:hi + 1]))


def weighted_distance_mass(k: Kernel, f: BoundedFunction, g: Grid, t: float) -> float:
    """Integral over [0,t] of ||(H(t,s)-H_inf(s)) f(s)||_F^2 ds.

    For constant f identically 1 this reproduces l2_distance_to_limit
    bit-exactly (same integrand code path, same trapezoid).
    """
    h_inf = _limit_on_nodes(k, g)
    return _trapz(_weighted_distance_sq(k, h_inf, f(g.nodes), t, g), g.dt)


def isometry_prediction(k: Kernel, f: BoundedFunction, g: Grid) -> IntegralCurve:
    """Predicted mean-square error of X_f(t) against the limit integral.

    Value at t: integral over [0,t] of ||(H(t,s)-H_inf(s)) f(s)||_F^2 ds
    plus the tail integral of ||H_inf(s) f(s)||_F^2 over [t, infinity).
    The tail beyond t_max comes from the registered closed form when f is
    constant scalar; otherwise the curve is flagged truncated.
    """
    h_inf = _limit_on_nodes(k, g)
    f_nodes = f(g.nodes)
    hf = np.einsum("kij,kjd->kid", h_inf, f_nodes)
    hf_sq = frobenius_sq(hf)
    tail_form = k.closed_forms.get("limit_tail")
    scale = None
    if tail_form is not None and f.constant_value is not None and f.dims == (1, 1):
        scale = float(f.constant_value[0, 0]) ** 2
    values, tails_beyond = [], []
    for t in g.eval_times:
        main = _trapz(_weighted_distance_sq(k, h_inf, f_nodes, t, g), g.dt)
        tail_inside = _trapz(hf_sq[g.node_index(t):], g.dt)
        beyond = scale * float(tail_form(g.t_max)) if scale is not None else 0.0
        values.append(main + tail_inside + beyond)
        tails_beyond.append(beyond)
    return IntegralCurve(
        times=g.eval_times, values=np.asarray(values), tag="isometry_prediction",
        metadata={"kernel": k.label, "f": f.label, "dt": g.dt, "t_max": g.t_max,
                  "truncated": scale is None, "tail_beyond": tails_beyond})
