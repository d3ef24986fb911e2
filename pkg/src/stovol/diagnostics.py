"""Monte Carlo manifestations of the convergence results.

Four studies: mean-square error curves against the isometry prediction,
the block-decomposition sequences behind the almost-sure argument, the
iterated-logarithm counterexample for the additive family, and the
sharpness study for the exponentially-fading kernel.  Asymptotic claims
are checked as finite-horizon, finite-ensemble trends with pilot-
calibrated bands; classifier thresholds are documented heuristics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._io import csv_text, json_dumps
from .criteria import (
    SLOW_DECAY_TOLERANCES,
    OuWindowReport,
    ThetaSchedule,
    check_ou_window_condition,
)
from .kernel import BoundedFunction, Kernel, counterexample_h_sharp, frobenius_sq, make_exponential
from .quadrature import (
    Grid,
    MissingDerivativeError,
    MissingLimitError,
    interval_trapz,
    isometry_prediction,
    limit_tail_mass,
    weighted_distance_mass,
)
from .stochastic import (
    BrownianEnsemble,
    SimulationResult,
    TailStatistics,
    as_tail_statistics,
    volterra_integral,
)

__all__ = [
    "MsqComparison",
    "DecompositionDiagnostics",
    "CounterexampleStudy",
    "OuSharpnessStudy",
    "msq_convergence_study",
    "proof_machinery_report",
    "counterexample_study",
    "ou_sharpness_study",
]


@dataclass(frozen=True, eq=False)
class MsqComparison:
    """MC mean-square deviations versus the quadrature prediction.

    The limit integral is truncated at t_max; the neglected variance
    (truncation_correction) is reported alongside and subtracted from the
    prediction before flagging, since the simulated limit cannot see it.
    """

    times: np.ndarray
    mc_mean: np.ndarray
    mc_se: np.ndarray
    prediction: np.ndarray
    truncation_correction: np.ndarray
    within_tolerance: np.ndarray  # bool per eval time
    c_disc: float
    metadata: Mapping = field(default_factory=dict)

    def csv(self) -> str:
        rows = zip(self.times, self.mc_mean, self.mc_se, self.prediction,
                   self.truncation_correction,
                   (str(bool(x)).lower() for x in self.within_tolerance))
        return csv_text(("t", "mc_mean", "mc_se", "prediction",
                         "truncation_correction", "within_tolerance"), rows)

    def to_json(self) -> str:
        return json_dumps({
            "metadata": dict(self.metadata), "c_disc": self.c_disc,
            "all_within_tolerance": bool(np.all(self.within_tolerance)),
            "rows": [
                {"t": float(t), "mc_mean": float(m), "mc_se": float(s),
                 "prediction": float(p), "truncation_correction": float(c),
                 "within_tolerance": bool(ok)}
                for t, m, s, p, c, ok in zip(self.times, self.mc_mean, self.mc_se,
                                             self.prediction, self.truncation_correction,
                                             self.within_tolerance)],
        })


def msq_convergence_study(k: Kernel, f: BoundedFunction, e: BrownianEnsemble,
                          g: Grid | None = None, c_disc: float = 3.0,
                          workers: int = 1) -> MsqComparison:
    """Compare E||X_f(t) - X_f*||^2 against the isometry prediction.

    Pass criterion per eval time: |MC - adjusted prediction| <= 3*SE +
    c_disc*dt, the second term covering left-point discretization bias.
    """
    g = e.grid if g is None else g
    sim = volterra_integral(k, f, e, g, workers=workers)
    dev_sq = sim.deviations() ** 2
    n_paths = dev_sq.shape[0]
    mc = dev_sq.mean(axis=0)
    se = dev_sq.std(axis=0, ddof=1) / np.sqrt(n_paths) if n_paths > 1 else np.zeros_like(mc)
    pred = isometry_prediction(k, f, g)
    beyond = np.asarray(pred.metadata["tail_beyond"], dtype=float)
    ok = np.abs(mc - (pred.values - beyond)) <= 3.0 * se + c_disc * g.dt
    meta = dict(sim.metadata)
    meta["prediction_truncated"] = bool(pred.metadata["truncated"])
    return MsqComparison(times=sim.times, mc_mean=mc, mc_se=se, prediction=pred.values,
                         truncation_correction=beyond, within_tolerance=ok,
                         c_disc=c_disc, metadata=meta)


@dataclass(frozen=True, eq=False)
class DecompositionDiagnostics:
    """Deterministic block sequences plus MC values of the four-term bound.

    Per block n: variance v_n^2 of the centered integral at t_n, window
    diagonal mass w_n, their log-weighted versions, the limit-mass window
    driving the second term, and per-path MC values of the four terms
    bounding the windowed supremum of the centered integral.
    """

    sched: ThetaSchedule
    n_values: np.ndarray       # block indices
    block_times: np.ndarray    # t_n snapped to the grid
    v_sq: np.ndarray
    w: np.ndarray
    v_sq_log_t: np.ndarray
    w_log_n: np.ndarray
    hinf_window_mass: np.ndarray
    term_start_value: np.ndarray     # (n_paths, blocks) |X~(t_n)|
    term_limit_window: np.ndarray    # (n_paths, blocks) sup of limit-integral window
    term_diag_window: np.ndarray     # (n_paths, blocks) sup of diagonal-integral window
    term_inner_du: np.ndarray        # (n_paths, blocks) du integral of |inner integral|
    metadata: Mapping = field(default_factory=dict)

    def sequences_csv(self) -> str:
        rows = zip(self.n_values, self.block_times, self.v_sq, self.w,
                   self.v_sq_log_t, self.w_log_n, self.hinf_window_mass)
        return csv_text(("n", "t_n", "v_sq", "w", "v_sq_log_t", "w_log_n",
                         "hinf_window_mass"), rows)

    def terms_csv(self) -> str:
        medians = [np.median(t, axis=0) for t in
                   (self.term_start_value, self.term_limit_window,
                    self.term_diag_window, self.term_inner_du)]
        rows = zip(self.n_values, self.block_times, *medians)
        return csv_text(("n", "t_n", "start_value_median", "limit_window_median",
                         "diag_window_median", "inner_du_median"), rows)

    def to_json(self) -> str:
        return json_dumps({
            "metadata": dict(self.metadata),
            "theta": self.sched.theta, "q": self.sched.q,
            "n": [int(x) for x in self.n_values],
            "t_n": [float(x) for x in self.block_times],
            "v_sq_log_t": [float(x) for x in self.v_sq_log_t],
            "w_log_n": [float(x) for x in self.w_log_n],
            "term_medians": {
                "start_value": [float(x) for x in np.median(self.term_start_value, axis=0)],
                "limit_window": [float(x) for x in np.median(self.term_limit_window, axis=0)],
                "diag_window": [float(x) for x in np.median(self.term_diag_window, axis=0)],
                "inner_du": [float(x) for x in np.median(self.term_inner_du, axis=0)],
            },
        })


def proof_machinery_report(k: Kernel, f: BoundedFunction, e: BrownianEnsemble,
                           g: Grid, sched: ThetaSchedule,
                           workers: int = 1) -> DecompositionDiagnostics:
    """Numerical diagnostics for the block decomposition of the a.s. argument.

    Block times n^theta are snapped to grid nodes.  v_n^2 uses the same
    quadrature as the L2-distance curve, so the two agree exactly for
    f identically 1.  Costs O(n_cells^2) derivative evaluations for the
    inner-integral term; meant for moderate grids.
    """
    if k.limit is None:
        raise MissingLimitError(f"kernel {k.label} has no limit function")
    if k.d1 is None:
        raise MissingDerivativeError(f"kernel {k.label} has no time derivative")
    n_vals, t_raw = [], []
    n = 2
    while sched.block_time(n + 1) <= g.t_max * (1 + 1e-12):
        n_vals.append(n)
        t_raw.append(sched.block_time(n))
        n += 1
    if len(n_vals) < 2:
        raise ValueError(f"horizon {g.t_max} too short for theta={sched.theta}")
    n_vals = np.asarray(n_vals)
    t_snap = np.array([g.nodes[g.node_index(t, snap=True)] for t in t_raw])
    t_next = np.array([g.nodes[g.node_index(sched.block_time(nn + 1), snap=True)]
                       for nn in n_vals])
    if np.any(np.diff(t_snap) <= 0):
        raise ValueError("grid too coarse: snapped block times collide")

    sup_f = f.sup_bound
    if sup_f is None:
        sup_f = float(np.sqrt(frobenius_sq(f(g.nodes))).max())

    v_sq = np.array([weighted_distance_mass(k, f, g, t) for t in t_snap])
    diag_sq = frobenius_sq(k.diag(g.nodes))
    w = np.array([interval_trapz(g.nodes, diag_sq, a, b, g.dt)
                  for a, b in zip(t_snap, t_next)]) * sup_f**2

    cells = g.cell_left_times
    f_cells = f(cells)
    h_inf_f = np.einsum("jab,jbd->jad", k.limit(cells), f_cells)
    hinf_sq_nodes = frobenius_sq(np.einsum("kij,kjd->kid", k.limit(g.nodes), f(g.nodes)))
    hinf_window = np.array([interval_trapz(g.nodes, hinf_sq_nodes, a, b, g.dt)
                            for a, b in zip(t_snap, t_next)])

    sim = volterra_integral(k, f, e, g.with_eval_times(t_snap), workers=workers)
    d_b = e.increments
    n_paths = e.n_paths
    dim = k.n

    ps_inf = np.zeros((n_paths, g.n_cells + 1, dim))
    np.cumsum(np.einsum("jad,mjd->mja", h_inf_f, d_b), axis=1, out=ps_inf[:, 1:, :])
    w_diag = np.einsum("jab,jbd->jad", k.diag(cells), f_cells)
    ps_diag = np.zeros((n_paths, g.n_cells + 1, dim))
    np.cumsum(np.einsum("jad,mjd->mja", w_diag, d_b), axis=1, out=ps_diag[:, 1:, :])

    inner_norm = np.zeros((n_paths, g.n_cells + 1))
    lo_cell = g.node_index(t_snap[0], snap=True)
    for i in range(lo_cell, g.n_cells + 1):
        if i == 0:
            continue
        w1 = np.einsum("jab,jbd->jad", k.d1_many(g.nodes[i], cells[:i]), f_cells[:i])
        vec = np.einsum("jad,mjd->ma", w1, d_b[:, :i, :])
        inner_norm[:, i] = np.sqrt(np.sum(vec * vec, axis=1))

    blocks = n_vals.size
    term1 = np.empty((n_paths, blocks))
    term2 = np.empty((n_paths, blocks))
    term3 = np.empty((n_paths, blocks))
    term4 = np.empty((n_paths, blocks))
    for bi, (a, b) in enumerate(zip(t_snap, t_next)):
        ia, ib = g.node_index(a), g.node_index(b)
        centered = sim.values[:, bi, :] - ps_inf[:, ia, :]
        term1[:, bi] = np.sqrt(np.sum(centered * centered, axis=1))
        for term, ps in ((term2, ps_inf), (term3, ps_diag)):
            window = ps[:, ia:ib + 1, :] - ps[:, ia:ia + 1, :]
            term[:, bi] = np.sqrt(np.sum(window * window, axis=2)).max(axis=1)
        term4[:, bi] = np.trapezoid(inner_norm[:, ia:ib + 1], dx=g.dt, axis=1)

    meta = dict(sim.metadata)
    meta["sup_f"] = sup_f
    return DecompositionDiagnostics(
        sched=sched, n_values=n_vals, block_times=t_snap, v_sq=v_sq, w=w,
        v_sq_log_t=v_sq * np.log(t_snap), w_log_n=w * np.log(n_vals),
        hinf_window_mass=hinf_window, term_start_value=term1,
        term_limit_window=term2, term_diag_window=term3, term_inner_du=term4,
        metadata=meta)


@dataclass(frozen=True, eq=False)
class CounterexampleStudy:
    """Running-max and tail-oscillation statistics of the interpolated
    counterexample factor times Brownian motion at integer times."""

    n_end: int
    per_path_max: np.ndarray       # (n_paths,) max over n <= N of |h(n) B(n)|
    median_max: float
    oscillation: np.ndarray        # (n_paths,) max-min of h(t)B(t) over [N/2, N]
    oscillation_fraction: float    # fraction of paths with oscillation > eps
    eps_oscillation: float
    checkpoints: np.ndarray        # n values for the median running-max curve
    running_max_median: np.ndarray
    metadata: Mapping = field(default_factory=dict)

    def csv(self) -> str:
        return csv_text(("n", "running_max_median"),
                        zip(self.checkpoints, self.running_max_median))

    def to_json(self) -> str:
        return json_dumps({
            "metadata": dict(self.metadata), "n_end": self.n_end,
            "median_max": self.median_max,
            "oscillation_fraction": self.oscillation_fraction,
            "eps_oscillation": self.eps_oscillation,
            "lil_prediction": float(np.sqrt(2.0)),
        })


def counterexample_study(g: Grid, e: BrownianEnsemble, n_end: int,
                         eps_oscillation: float = 0.05) -> CounterexampleStudy:
    """Evidence that the additive counterexample integral has no a.s. limit.

    Tracks max_{n<=N} |h(n)B(n)| per path (iterated-logarithm prediction
    for the limsup: sqrt(2)) and the oscillation of h(t)B(t) over the
    tail window [N/2, N]; persistent oscillation marks a non-convergent
    path.
    """
    if n_end < 1000:
        raise ValueError(f"horizon too short: need N >= 1000, got {n_end}")
    steps = int(round(1.0 / g.dt))
    if abs(steps * g.dt - 1.0) > 1e-9 or n_end * steps > g.n_cells:
        raise ValueError("grid must cover [0, N] with integer nodes")
    h = counterexample_h_sharp()
    ns = np.arange(1, n_end + 1)
    h_vals = np.sqrt(frobenius_sq(h(ns.astype(float))))
    b = np.cumsum(e.increments[:, :, 0], axis=1)[:, ns * steps - 1]
    prod = np.abs(b) * h_vals
    running = np.maximum.accumulate(prod, axis=1)
    per_path_max = running[:, -1]
    half = n_end // 2
    tail = b[:, half - 1:] * h_vals[half - 1:]
    osc = tail.max(axis=1) - tail.min(axis=1)
    checkpoints = np.unique(np.geomspace(1, n_end, 128).round().astype(int))
    meta = {"seed": e.master_seed, "n_paths": e.n_paths, "rng": e.algorithm,
            "h_sharp": h.label}
    return CounterexampleStudy(
        n_end=n_end, per_path_max=per_path_max,
        median_max=float(np.median(per_path_max)), oscillation=osc,
        oscillation_fraction=float(np.mean(osc > eps_oscillation)),
        eps_oscillation=eps_oscillation, checkpoints=checkpoints.astype(float),
        running_max_median=np.median(running[:, checkpoints - 1], axis=0),
        metadata=meta)


@dataclass(frozen=True, eq=False)
class OuSharpnessStudy:
    """Simulated behavior of the exponentially-fading kernel integral."""

    msq: MsqComparison
    tail: TailStatistics
    window_report: OuWindowReport
    classification: str  # converges-to-0 | bounded-oscillating | unbounded
    oscillation_fraction: float
    thresholds: Mapping

    def to_json(self) -> str:
        return json_dumps({
            "classification": self.classification,
            "oscillation_fraction": self.oscillation_fraction,
            "thresholds": dict(self.thresholds),
            "window_condition": self.window_report.to_dict(),
            "tail_medians": [float(x) for x in self.tail.medians],
        })


def ou_sharpness_study(sigma: BoundedFunction, g: Grid, e: BrownianEnsemble,
                       lam: float = 1.0, conv_eps: float = 0.05,
                       osc_eps: float = 0.05, growth_slope: float = 0.1,
                       workers: int = 1) -> OuSharpnessStudy:
    """Classify Y(t) = integral of exp(-lam(t-s))sigma(s) dB(s) by trend.

    Heuristic three-way classifier (thresholds documented in the result):
    converges-to-0 when tail sups die out, unbounded when the MC
    mean-square curve grows at a clear power rate, bounded-oscillating
    otherwise.  Asymptotic truth is out of reach; this labels the horizon.
    """
    k = make_exponential(sigma, lam)
    f_one = BoundedFunction.constant(1.0)
    sim = volterra_integral(k, f_one, e, g, workers=workers)
    dev_sq = sim.deviations() ** 2
    mc_mean = dev_sq.mean(axis=0)
    mc_se = dev_sq.std(axis=0, ddof=1) / np.sqrt(e.n_paths) if e.n_paths > 1 else np.zeros_like(mc_mean)
    pred = isometry_prediction(k, f_one, g)
    beyond = np.asarray(pred.metadata["tail_beyond"], dtype=float)
    ok = np.abs(mc_mean - (pred.values - beyond)) <= 3.0 * mc_se + 3.0 * g.dt
    msq = MsqComparison(times=sim.times, mc_mean=mc_mean, mc_se=mc_se,
                        prediction=pred.values, truncation_correction=beyond,
                        within_tolerance=ok, c_disc=3.0, metadata=dict(sim.metadata))
    half, quarter = g.t_max / 2.0, 3.0 * g.t_max / 4.0
    tail = as_tail_statistics(sim, [(half, quarter), (quarter, g.t_max)],
                              eps_values=(conv_eps, 0.1))
    window_report = check_ou_window_condition(sigma, g, SLOW_DECAY_TOLERANCES)

    dev = sim.deviations()
    mask = sim.times >= quarter
    osc_window = dev[:, mask]
    osc = osc_window.max(axis=1) - osc_window.min(axis=1)
    osc_fraction = float(np.mean(osc > osc_eps))

    mc = msq.mc_mean
    last_half = sim.times >= half
    if last_half.sum() >= 2 and np.max(mc[last_half]) > 0:
        slope = float(np.polyfit(np.log(sim.times[last_half]),
                                 np.log(np.maximum(mc[last_half], 1e-300)), 1)[0])
    else:
        slope = 0.0
    median_tail_sup = float(tail.medians[-1])
    if median_tail_sup < conv_eps:
        classification = "converges-to-0"
    elif slope > growth_slope and mc[-1] > 1.0:
        classification = "unbounded"
    else:
        classification = "bounded-oscillating"
    thresholds = {"conv_eps": conv_eps, "osc_eps": osc_eps,
                  "growth_slope": growth_slope, "median_tail_sup": median_tail_sup,
                  "msq_tail_slope": slope}
    return OuSharpnessStudy(msq=msq, tail=tail, window_report=window_report,
                            classification=classification,
                            oscillation_fraction=osc_fraction, thresholds=thresholds)
