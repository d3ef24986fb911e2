"""Brownian ensembles and discretization of the Ito-Volterra integral.

Increments are generated per path from an independent PCG64 stream whose
seed is a SplitMix64 mix of the master seed and the path index, so any
path can be regenerated bit-exactly in isolation and worker scheduling
cannot change results.  Normal variates come from the inverse CDF applied
to open-interval uniforms (recorded in result metadata).

Stochastic integrals use the non-anticipating left-point rule (Ito, not
Stratonovich).  The kernel's dependence on the outer time t forbids
incremental reuse across eval times, so the Volterra sum costs
O(paths * |eval_times| * n_cells); the blocked reduction below is the
performance hot spot.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from ._io import csv_text, json_dumps
from .kernel import BoundedFunction, DimensionMismatchError, Kernel, frobenius_sq
from .quadrature import Grid, MissingDerivativeError, MissingLimitError

__all__ = [
    "ALGORITHM_ID",
    "BrownianEnsemble",
    "SimulationResult",
    "FubiniReport",
    "TailStatistics",
    "LilReport",
    "generate_ensemble",
    "path_increments",
    "volterra_integral",
    "fubini_decomposition",
    "as_tail_statistics",
    "lil_statistic",
]

ALGORITHM_ID = "pcg64/splitmix64-path-mix/inverse-cdf-normal"

_MASK64 = (1 << 64) - 1
_PATH_BLOCK = 1024  # fixed block size keeps reductions identical for any worker count


def _mix64(master_seed: int, m: int) -> int:
    """SplitMix64 finalizer over (master_seed, path index)."""
    x = (master_seed + (m + 1) * 0x9E3779B97F4A7C15) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def path_increments(master_seed: int, m: int, d: int, g: Grid) -> np.ndarray:
    """Brownian increments of path m, shape (n_cells, d); pure in (seed, m)."""
    rng = np.random.Generator(np.random.PCG64(_mix64(master_seed, m)))
    raw = rng.integers(0, 1 << 53, size=(g.n_cells, d), dtype=np.int64)
    uniforms = (raw + 0.5) * 2.0**-53
    return ndtri(uniforms) * np.sqrt(g.dt)


def _block_ranges(n: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + _PATH_BLOCK, n)) for lo in range(0, n, _PATH_BLOCK)]


def _run_blocked(task, n_items: int, workers: int) -> None:
    """Run task(lo, hi) over fixed path blocks, optionally on threads.

    Block boundaries never depend on the worker count, and each block
    writes a disjoint output slice, so results are identical for any
    degree of parallelism.
    """
    ranges = _block_ranges(n_items)
    if workers <= 1 or len(ranges) == 1:
        for lo, hi in ranges:
            task(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda r: task(*r), ranges))


@dataclass(frozen=True, eq=False)
class BrownianEnsemble:
    """Seeded ensemble of independent d-component Brownian increments."""

    master_seed: int
    n_paths: int
    d: int
    grid: Grid
    increments: np.ndarray  # (n_paths, n_cells, d), N(0, dt) entries
    algorithm: str = ALGORITHM_ID

    def path_sums(self) -> np.ndarray:
        """B at every node, shape (n_paths, n_cells+1, d)."""
        out = np.zeros((self.n_paths, self.grid.n_cells + 1, self.d))
        np.cumsum(self.increments, axis=1, out=out[:, 1:, :])
        return out


def generate_ensemble(master_seed: int, n_paths: int, d: int, g: Grid,
                      workers: int = 1) -> BrownianEnsemble:
    """Generate n_paths independent paths; deterministic in (seed, M, d, g)."""
    if n_paths < 1:
        raise ValueError(f"need at least one path, got {n_paths}")
    if d < 1:
        raise ValueError(f"need at least one Brownian component, got {d}")
    increments = np.empty((n_paths, g.n_cells, d))

    def fill(lo: int, hi: int) -> None:
        for m in range(lo, hi):
            increments[m] = path_increments(master_seed, m, d, g)

    _run_blocked(fill, n_paths, workers)
    return BrownianEnsemble(master_seed=master_seed, n_paths=n_paths, d=d,
                            grid=g, increments=increments)


@dataclass(frozen=True, eq=False)
class SimulationResult:
    """Volterra integral paths at eval times, with the limit integral."""

    times: np.ndarray        # (K,)
    values: np.ndarray       # (n_paths, K, n)
    limit_values: np.ndarray | None  # (n_paths, n)
    metadata: Mapping = field(default_factory=dict)

    def deviations(self) -> np.ndarray:
        """||X_f(t) - X_f*|| per path and eval time, shape (n_paths, K)."""
        if self.limit_values is None:
            raise MissingLimitError("simulation carries no limit integral")
        diff = self.values - self.limit_values[:, None, :]
        return np.sqrt(np.sum(diff * diff, axis=2))

    def csv_long(self) -> str:
        rows = []
        for m in range(self.values.shape[0]):
            for ki, t in enumerate(self.times):
                for comp in range(self.values.shape[2]):
                    rows.append((str(m), t, str(comp), self.values[m, ki, comp]))
        return csv_text(("path", "t", "component", "value"), rows)

    def summary_json(self) -> str:
        moments = []
        for ki, t in enumerate(self.times):
            vals = self.values[:, ki, :]
            moments.append({
                "t": float(t),
                "mean": [float(x) for x in vals.mean(axis=0)],
                "variance": [float(x) for x in vals.var(axis=0, ddof=1)] if vals.shape[0] > 1 else None,
                "mean_square_norm": float(np.mean(np.sum(vals * vals, axis=1))),
            })
        return json_dumps({"metadata": dict(self.metadata), "moments": moments})


def _check_dims(k: Kernel, f: BoundedFunction, e: BrownianEnsemble) -> None:
    n, d = f.dims
    if k.n != n:
        raise DimensionMismatchError(
            f"kernel is {k.n}x{k.n} but f is {n}x{d}")
    if e.d != d:
        raise DimensionMismatchError(
            f"f has {d} columns but the ensemble carries {e.d} Brownian components")


def volterra_integral(k: Kernel, f: BoundedFunction, e: BrownianEnsemble,
                      g: Grid | None = None, workers: int = 1) -> SimulationResult:
    """Left-point Ito sums X_f(t_k) = sum_{t_j < t_k} H(t_k,t_j) f(t_j) dB_j.

    Also fills the limit integral X_f* = sum_j H_inf(t_j) f(t_j) dB_j over
    the whole grid when the kernel has a limit (truncation at t_max; the
    neglected variance is limit_tail_mass(t_max)).
    """
    g = e.grid if g is None else g
    _check_dims(k, f, e)
    cells = g.cell_left_times
    f_cells = f(cells)                          # (N, n, d)
    d_b = e.increments
    n_paths, big_k = e.n_paths, g.eval_times.size
    values = np.empty((n_paths, big_k, k.n))

    for ki, t in enumerate(g.eval_times):
        j = g.node_index(t)
        weights = np.einsum("jab,jbd->jad", k.eval_many(t, cells[:j]), f_cells[:j])

        def reduce_block(lo: int, hi: int, ki=ki, j=j, weights=weights) -> None:
            values[lo:hi, ki, :] = np.einsum("jad,mjd->ma", weights, d_b[lo:hi, :j, :])

        _run_blocked(reduce_block, n_paths, workers)

    limit_values = None
    if k.limit is not None:
        w_inf = np.einsum("jab,jbd->jad", k.limit(cells), f_cells)
        limit_values = np.empty((n_paths, k.n))

        def reduce_limit(lo: int, hi: int) -> None:
            limit_values[lo:hi, :] = np.einsum("jad,mjd->ma", w_inf, d_b[lo:hi, :, :])

        _run_blocked(reduce_limit, n_paths, workers)

    meta = {
        "kernel": k.label, "f": f.label, "seed": e.master_seed,
        "n_paths": n_paths, "d": e.d, "dt": g.dt, "t_max": g.t_max,
        "rng": e.algorithm, "scheme": "left-point-ito",
        "limit_truncated_at": g.t_max if k.limit is not None else None,
    }
    return SimulationResult(times=g.eval_times.copy(), values=values,
                            limit_values=limit_values, metadata=meta)


@dataclass(frozen=True, eq=False)
class FubiniReport:
    """Direct vs decomposed representations of the centered integral.

    The decomposition splits X_f(t) minus the partial limit integral into
    a diagonal stochastic integral plus the time integral of an inner
    stochastic integral; both representations consume the identical
    increment stream, so the residual is pure discretization error.
    """

    times: np.ndarray            # (K,)
    direct: np.ndarray           # (n_paths, K, n)
    decomposed: np.ndarray       # (n_paths, K, n)
    residuals: np.ndarray        # (K,) max over paths/components
    max_residual: float
    metadata: Mapping = field(default_factory=dict)

    def to_json(self) -> str:
        return json_dumps({
            "metadata": dict(self.metadata),
            "residuals": [[float(t), float(r)] for t, r in zip(self.times, self.residuals)],
            "max_residual": self.max_residual,
        })


def fubini_decomposition(k: Kernel, f: BoundedFunction, e: BrownianEnsemble,
                         workers: int = 1) -> FubiniReport:
    """Check the interchange of dB and du integration on simulated paths.

    Costs O(n_cells^2) kernel derivative evaluations, so it is meant for
    small ensembles on moderate grids.
    """
    g = e.grid
    if k.limit is None:
        raise MissingLimitError(f"kernel {k.label} has no limit function")
    if k.d1 is None:
        raise MissingDerivativeError(f"kernel {k.label} has no time derivative")
    _check_dims(k, f, e)
    cells = g.cell_left_times
    f_cells = f(cells)
    d_b = e.increments
    n_paths = e.n_paths
    n = k.n

    sim = volterra_integral(k, f, e, workers=workers)

    # prefix sums of the limit and centered-diagonal stochastic integrals
    w_inf = np.einsum("jab,jbd->jad", k.limit(cells), f_cells)
    w_diag = np.einsum("jab,jbd->jad", k.diag(cells) - k.limit(cells), f_cells)
    contrib_inf = np.einsum("jad,mjd->mja", w_inf, d_b)
    contrib_diag = np.einsum("jad,mjd->mja", w_diag, d_b)
    ps_inf = np.zeros((n_paths, g.n_cells + 1, n))
    ps_diag = np.zeros((n_paths, g.n_cells + 1, n))
    np.cumsum(contrib_inf, axis=1, out=ps_inf[:, 1:, :])
    np.cumsum(contrib_diag, axis=1, out=ps_diag[:, 1:, :])

    # inner stochastic integral I(u) = sum_{t_j < u} H_1(u, t_j) f(t_j) dB_j
    inner = np.zeros((n_paths, g.n_cells + 1, n))
    nodes = g.nodes
    for i in range(1, g.n_cells + 1):
        w1 = np.einsum("jab,jbd->jad", k.d1_many(nodes[i], cells[:i]), f_cells[:i])
        inner[:, i, :] = np.einsum("jad,mjd->ma", w1, d_b[:, :i, :])
    # cumulative trapezoid of I(u) du along the nodes
    du_integral = np.zeros_like(inner)
    np.cumsum(0.5 * g.dt * (inner[:, 1:, :] + inner[:, :-1, :]), axis=1,
              out=du_integral[:, 1:, :])

    idx = [g.node_index(t) for t in g.eval_times]
    direct = sim.values - ps_inf[:, idx, :]
    decomposed = ps_diag[:, idx, :] + du_integral[:, idx, :]
    residuals = np.max(np.abs(direct - decomposed), axis=(0, 2))
    meta = {
        "kernel": k.label, "f": f.label, "seed": e.master_seed,
        "n_paths": n_paths, "dt": g.dt, "t_max": g.t_max, "rng": e.algorithm,
    }
    return FubiniReport(times=g.eval_times.copy(), direct=direct,
                        decomposed=decomposed, residuals=residuals,
                        max_residual=float(residuals.max()), metadata=meta)


@dataclass(frozen=True, eq=False)
class TailStatistics:
    """Windowed sup statistics of ||X_f(t) - X_f*|| over eval times.

    Grid suprema underestimate the true path suprema over continuous
    windows; every report carries that caveat.
    """

    windows: tuple[tuple[float, float], ...]
    sups: np.ndarray                 # (n_windows, n_paths)
    medians: np.ndarray              # (n_windows,)
    fractions_below: Mapping[float, np.ndarray]  # eps -> (n_windows,)
    metadata: Mapping = field(default_factory=dict)

    def to_json(self) -> str:
        return json_dumps({
            "metadata": dict(self.metadata),
            "windows": [[float(a), float(b)] for a, b in self.windows],
            "medians": [float(x) for x in self.medians],
            "fractions_below": {str(eps): [float(x) for x in arr]
                                for eps, arr in self.fractions_below.items()},
        })


def as_tail_statistics(r: SimulationResult, windows: Sequence[tuple[float, float]],
                       eps_values: Sequence[float] = (0.1,)) -> TailStatistics:
    """Per-window, per-path sup of ||X_f(t) - X_f*||; convergence evidence.

    Each window must contain at least two eval times.
    """
    if not windows:
        raise ValueError("need at least one window")
    dev = r.deviations()
    sups = []
    for a, b in windows:
        mask = (r.times >= a) & (r.times <= b)
        if mask.sum() < 2:
            raise ValueError(f"window [{a}, {b}] covers fewer than two eval times")
        sups.append(dev[:, mask].max(axis=1))
    sups = np.stack(sups)
    fractions = {float(eps): (sups < eps).mean(axis=1) for eps in eps_values}
    meta = dict(r.metadata)
    meta["caveat"] = "grid suprema underestimate continuous-window suprema"
    return TailStatistics(windows=tuple((float(a), float(b)) for a, b in windows),
                          sups=sups, medians=np.median(sups, axis=1),
                          fractions_below=fractions, metadata=meta)


@dataclass(frozen=True, eq=False)
class LilReport:
    """Iterated-logarithm scaling statistic per path and its median."""

    per_path: np.ndarray
    median: float
    n_start: int
    n_end: int
    normalizer: str
    metadata: Mapping = field(default_factory=dict)


def lil_statistic(e: BrownianEnsemble, n_end: int) -> LilReport:
    """S = max_{3 <= n <= N} |B(n)| / sqrt(2 n loglog(n+2)) per path.

    The discrete iterated-logarithm law normalizes by sqrt(2n loglog(n+2))
    and has limsup 1; the max starts at n=3.  Uses the first Brownian
    component.  Requires integer times to be grid nodes and N >= 10.
    """
    g = e.grid
    if n_end < 10:
        raise ValueError(f"horizon too short: need N >= 10, got {n_end}")
    steps = int(round(1.0 / g.dt))
    if abs(steps * g.dt - 1.0) > 1e-9 or steps < 1:
        raise ValueError(f"grid step {g.dt} does not resolve integer times")
    if n_end * steps > g.n_cells:
        raise ValueError(f"horizon too short: grid covers only {g.t_max}, need {n_end}")
    b_all = np.cumsum(e.increments[:, :, 0], axis=1)        # B at nodes 1..n_cells
    ns = np.arange(3, n_end + 1)
    b_int = b_all[:, ns * steps - 1]                        # B(n) for n = 3..N
    denom = np.sqrt(2.0 * ns * np.log(np.log(ns + 2.0)))
    per_path = np.max(np.abs(b_int) / denom, axis=1)
    return LilReport(per_path=per_path, median=float(np.median(per_path)),
                     n_start=3, n_end=n_end, normalizer="sqrt(2*n*loglog(n+2))",
                     metadata={"seed": e.master_seed, "n_paths": e.n_paths,
                               "rng": e.algorithm})
