"""Experiment harness: single runs, V-sweeps and their CSV/JSON outputs.

Random numbers come from numpy's ``default_rng`` (PCG64) seeded with the
configured seed, so a (config, seed) pair fully determines every output.

``timeseries.csv`` columns, in order:

``slot``
    number of slots simulated so far (t)
``mean_ap_throughput``, ``mean_p2p_throughput``
    packets per user per slot received from access points / peers, averaged over [0, t)
``mean_Q``, ``max_Q``, ``max_H``
    queue statistics of the state after slot t
``utility_of_running_avg``
    sum of user utilities evaluated at the running-average download rates

The sweep CSV has one row per V with columns ``V, throughput, utility,
mean_Q, max_Q, max_H, Q_bound``; ``throughput`` is the summed time-average
download rate of all users and ``Q_bound`` is ``max_k (V * nu_k + x_max_k)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig
from .files import draw_requests
from .metrics import (BoundConstants, TraceAccumulator, bound_constants, check_residuals,
                      check_trace, drift_bound_B)
from .scheduler import Network, initial_state, step
from .topology import GridSpec, MobileGrid

TIMESERIES_COLUMNS = ("slot", "mean_ap_throughput", "mean_p2p_throughput", "mean_Q", "max_Q",
                      "max_H", "utility_of_running_avg")
SWEEP_COLUMNS = ("V", "throughput", "utility", "mean_Q", "max_Q", "max_H", "Q_bound")
RNG_ALGORITHM = "numpy.random.default_rng (PCG64)"


def build_network(cfg: ExperimentConfig) -> Network:
    process = MobileGrid(GridSpec(cfg.rows, cfg.cols, cfg.stay_probability), cfg.users,
                         cfg.access_points, cfg.peer_rate, peer_off=frozenset(cfg.peer_off))
    try:
        return Network(process, cfg.user_configs(), cfg.schedule(), cfg.sizes(),
                       cfg.wake_probability)
    except ValueError as exc:
        raise ConfigError("x_max", str(exc)) from None


@dataclass
class RunResult:
    config: ExperimentConfig
    V: float
    trace: TraceAccumulator
    constants: BoundConstants | None
    report: dict

    @property
    def passed(self) -> bool:
        return self.report["checks"]["passed"]


def simulate(cfg: ExperimentConfig, V: float | None = None, keep_series: bool = True) -> RunResult:
    """Run the controller for ``cfg.slots`` slots from empty queues.

    With ``keep_series`` the full per-slot series are stored, which enables
    the window-residual check and the time-series CSV.
    """
    V = cfg.V if V is None else float(V)
    net = build_network(cfg)
    rng = np.random.default_rng(cfg.seed)
    K = cfg.users
    files = draw_requests(net.schedule.probability_at(0), rng, K, K + cfg.access_points,
                          cfg.mode == "finite", net.sizes)
    state = initial_state(net, files, rng)
    trace = TraceAccumulator(net.users, state.queues, cfg.slots if keep_series else None)
    for _ in range(cfg.slots):
        state, m = step(state, V, rng)
        trace.record(m)
    constants = _constants(net, V)
    return RunResult(cfg, V, trace, constants, _report(cfg, V, trace, constants))


def _constants(net: Network, V: float) -> BoundConstants | None:
    B = drift_bound_B(net.users, [net.process.upload_cap()] * len(net.users))
    try:
        return bound_constants(net.users, B, V)
    except ValueError:
        return None  # unbounded slope or beta = 0: the ceilings do not apply


def _report(cfg: ExperimentConfig, V: float, trace: TraceAccumulator,
            constants: BoundConstants | None) -> dict:
    avg = trace.averages()
    K = max(cfg.users, 1)
    T = max(trace.slots, 1)
    sched = cfg.schedule()
    phases = []
    for i, row in trace.phase_throughput().items():
        phases.append({"phase": i, "p": sched.phases[i][1], "start": sched.starts[i],
                       "slots": row["slots"], "ap_per_user": row["ap"],
                       "p2p_per_user": row["peer"]})
    checks: dict = {"queue_bound": None, "norm_bound": None, "window_residuals": None,
                    "passed": True}
    if constants is not None:
        tr = check_trace(trace, constants)
        checks["queue_bound"] = {"pass": tr.q_bound_pass, "max_Q": max(tr.max_Q, default=0.0),
                                "bound": min(tr.Q_bound, default=math.inf)}
        checks["norm_bound"] = {"pass": tr.norm_bound_pass, "max_theta": tr.max_theta,
                               "bound": tr.theta_bound}
        passed = tr.passed
        if trace.horizon is not None:
            windows = [w for w in cfg.windows if w <= trace.slots]
            res = check_residuals(trace, constants, windows)
            checks["window_residuals"] = {str(w): r for w, r in res.items()}
            passed = passed and all(r["tit_for_tat_pass"] and r["aux_pass"] for r in res.values())
        checks["passed"] = bool(passed)
    return {
        "rng": RNG_ALGORITHM,
        "config": cfg.to_dict(),
        "V": V,
        "slots": trace.slots,
        "utility": trace.utility(),
        "throughput": {
            "ap_packets": trace.ap_packets,
            "p2p_packets": trace.peer_packets,
            "mean_ap_per_user": trace.ap_packets / (T * K),
            "mean_p2p_per_user": trace.peer_packets / (T * K),
            "total": float(avg["x"].sum()),
        },
        "averages": {name: values.tolist() for name, values in avg.items()},
        "phases": phases,
        "max_Q": float(trace.q_peak.max(initial=0.0)),
        "max_H": float(trace.h_peak.max(initial=0.0)),
        "mean_Q": time_average_mean_q(trace),
        "bound_constants": None if constants is None else constants.as_dict(),
        "checks": checks,
    }


def time_average_mean_q(trace: TraceAccumulator) -> float:
    """Average over slots 1..T of the per-user mean data queue."""
    series = trace.mean_q[1:]
    return float(sum(series) / len(series)) if series else 0.0


def timeseries_rows(trace: TraceAccumulator, every: int) -> list[tuple]:
    if trace.horizon is None:
        raise ValueError("time series need a trace recorded with a horizon")
    T, K = trace.slots, max(trace.n_users, 1)
    slots = list(range(every, T + 1, every))
    if not slots or slots[-1] != T:
        slots.append(T)
    slots = [t for t in slots if t >= 1]
    idx = np.asarray(slots) - 1
    cum_x = np.cumsum(trace.x[:T], axis=0, dtype=float)[idx]
    cum_ap = np.cumsum(trace.x_ap[:T], axis=0, dtype=float)[idx]
    rows = []
    for i, t in enumerate(slots):
        xbar = cum_x[i] / t
        ap = cum_ap[i].sum() / (t * K)
        p2p = (cum_x[i].sum() - cum_ap[i].sum()) / (t * K)
        util = sum(c.utility.value(float(v)) for c, v in zip(trace.cfgs, xbar))
        rows.append((t, float(ap), float(p2p), trace.mean_q[t], trace.max_q[t], trace.max_h[t],
                     float(util)))
    return rows


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RunResult:
    """Simulate ``cfg`` and write ``timeseries.csv`` and ``report.json`` into ``out_dir``."""
    result = simulate(cfg)
    out = Path(cfg.out if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "timeseries.csv", TIMESERIES_COLUMNS,
              timeseries_rows(result.trace, cfg.csv_every))
    (out / "report.json").write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return result


def sweep_row(result: RunResult) -> dict:
    cfgs = result.trace.cfgs
    bound = max((result.V * c.utility.max_slope + c.x_max for c in cfgs), default=0.0)
    r = result.report
    return {"V": result.V, "throughput": r["throughput"]["total"], "utility": r["utility"],
            "mean_Q": r["mean_Q"], "max_Q": r["max_Q"], "max_H": r["max_H"], "Q_bound": bound}


def sweep(cfg: ExperimentConfig, V_values: Sequence[float],
          out_dir: str | Path | None = None) -> list[dict]:
    """One run per ``V`` with the same seed; optionally writes ``sweep.csv``."""
    rows = []
    for V in V_values:
        result = simulate(cfg, V, keep_series=False)
        if not result.passed:
            raise BoundCheckFailed(f"V={V}: queue bound check failed", result.report["checks"])
        rows.append(sweep_row(result))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "sweep.csv", SWEEP_COLUMNS,
                  [tuple(float(row[c]) for c in SWEEP_COLUMNS) for row in rows])
    return rows


class BoundCheckFailed(AssertionError):
    """A deterministic queue bound was violated during a run."""

    def __init__(self, message: str, checks: dict):
        super().__init__(message)
        self.checks = checks
