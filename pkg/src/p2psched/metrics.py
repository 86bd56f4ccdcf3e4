"""Time averages, Lyapunov diagnostics and the deterministic queue-bound checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .scheduler import SlotMetrics, UserConfig, VirtualQueueState
from .utility import PureLog


def lyapunov(queues: VirtualQueueState) -> float:
    """Half the squared norm of the stacked queue vector."""
    return 0.5 * (sum(q * q for q in queues.Q) + sum(h * h for h in queues.H))


def theta_norm(queues: VirtualQueueState) -> float:
    return math.sqrt(sum(q * q for q in queues.Q) + sum(h * h for h in queues.H))


def drift(before: VirtualQueueState, after: VirtualQueueState) -> float:
    return lyapunov(after) - lyapunov(before)


def drift_bound_B(cfgs: Sequence[UserConfig], y_max: Sequence[int]) -> float:
    """Per-slot upper bound on the second-order drift term.

    Each squared difference of non-negative quantities is bounded by the
    square of the larger one.
    """
    total = 0.0
    for c, ym in zip(cfgs, y_max, strict=True):
        total += max(c.alpha * c.x_max, c.beta + ym) ** 2
        total += float(c.x_max) ** 2  # gamma_max = x_max
    return 0.5 * total


@dataclass(frozen=True)
class BoundConstants:
    B: float
    C0: float
    C1: float
    C2: float
    g: float
    V: float
    Q_max: tuple[float, ...]
    H_max: tuple[float, ...]

    @property
    def theta_max(self) -> float:
        return self.C1 + self.C2 * self.V

    def as_dict(self) -> dict:
        d = asdict(self)
        d["Q_max"] = list(self.Q_max)
        d["H_max"] = list(self.H_max)
        d["theta_max"] = self.theta_max
        return d


def queue_bounds(cfgs: Sequence[UserConfig], V: float) -> tuple[float, ...]:
    """Deterministic data-queue ceiling ``V * nu_k + x_max_k`` (infinite for unbounded slope)."""
    return tuple(V * c.utility.max_slope + c.x_max for c in cfgs)


def bound_constants(cfgs: Sequence[UserConfig], B: float, V: float) -> BoundConstants:
    """Constants of the reputation-queue bound ``||Theta(t)|| <= C1 + C2 V``.

    Raises ValueError when some utility has unbounded slope or some beta is 0.
    """
    K = len(cfgs)
    if K == 0:
        return BoundConstants(B, 0.0, 0.0, 0.0, 0.0, V, (), ())
    if any(isinstance(c.utility, PureLog) or not math.isfinite(c.utility.max_slope) for c in cfgs):
        raise ValueError("queue bounds need utilities with a finite maximum slope")
    beta_min = min(c.beta for c in cfgs)
    if beta_min <= 0:
        raise ValueError("reputation-queue bound needs beta_k > 0 for every user")
    x_max = max(c.x_max for c in cfgs)
    nu_max = max(c.utility.max_slope for c in cfgs)
    alpha_max = max(c.alpha for c in cfgs)
    C0 = sum(c.utility.value(c.x_max) - c.utility.value(0.0) for c in cfgs)
    # H can grow by alpha*x_max in a slot, which exceeds x_max only when alpha > 1
    g = max(1.0, alpha_max) * x_max * math.sqrt(2 * K)
    C1 = B / beta_min + x_max * math.sqrt(K) + g
    C2 = C0 / beta_min + nu_max * math.sqrt(K)
    Q_max = queue_bounds(cfgs, V)
    H_max = (C1 + C2 * V,) * K
    return BoundConstants(B, C0, C1, C2, g, V, Q_max, H_max)


class TraceAccumulator:
    """Running sums and per-slot summaries of a simulation.

    With ``horizon`` given, the full per-slot, per-user series of ``x``,
    ``y``, ``gamma``, ``Q`` and ``H`` are kept as arrays (needed for window
    residuals) and the sums are derived from them.
    """

    def __init__(self, cfgs: Sequence[UserConfig], initial: VirtualQueueState | None = None,
                 horizon: int | None = None):
        self.cfgs = tuple(cfgs)
        K = len(self.cfgs)
        self.n_users = K
        self.slots = 0
        self.horizon = horizon
        self.mean_q: list[float] = []
        self.max_q: list[float] = []
        self.max_h: list[float] = []
        self.norm: list[float] = []
        self.phases: dict[int, list[int]] = {}  # phase -> [slots, ap packets, peer packets]
        if horizon is not None:
            self.x = np.zeros((horizon, K), dtype=np.int32)
            self.y = np.zeros((horizon, K), dtype=np.int32)
            self.x_ap = np.zeros((horizon, K), dtype=np.int32)
            self.gamma = np.zeros((horizon, K))
            self.Q = np.zeros((horizon + 1, K))
            self.H = np.zeros((horizon + 1, K))
        else:
            self._sums = np.zeros((4, K))  # x, y, gamma, x_ap
            self._peaks = np.zeros((2, K))  # Q, H
        self._observe(initial if initial is not None else VirtualQueueState.zeros(K))

    def _observe(self, queues: VirtualQueueState):
        Q, H = queues.Q, queues.H
        if self.horizon is not None:
            self.Q[self.slots] = Q
            self.H[self.slots] = H
        else:
            np.maximum(self._peaks, (Q, H), out=self._peaks)
        K = self.n_users
        self.mean_q.append(sum(Q) / K if K else 0.0)
        self.max_q.append(max(Q, default=0.0))
        self.max_h.append(max(H, default=0.0))
        self.norm.append(math.sqrt(sum([q * q for q in Q]) + sum([h * h for h in H])))

    def record(self, m: SlotMetrics):
        d = m.decision
        t = self.slots
        if self.horizon is not None:
            if t >= self.horizon:
                raise IndexError("trace horizon exhausted")
            self.x[t] = d.x
            self.y[t] = d.y
            self.x_ap[t] = d.x_ap
            self.gamma[t] = d.gamma
        else:
            self._sums += (d.x, d.y, d.gamma, d.x_ap)
        got = sum(d.x)
        from_ap = sum(d.x_ap)
        tally = self.phases.setdefault(m.phase, [0, 0, 0])
        tally[0] += 1
        tally[1] += from_ap
        tally[2] += got - from_ap
        self.slots = t + 1
        self._observe(m.queues)

    def _sum(self, i: int, name: str) -> np.ndarray:
        if self.horizon is None:
            return self._sums[i]
        return getattr(self, name)[:self.slots].sum(axis=0, dtype=float)

    @property
    def x_sum(self) -> np.ndarray:
        return self._sum(0, "x")

    @property
    def y_sum(self) -> np.ndarray:
        return self._sum(1, "y")

    @property
    def gamma_sum(self) -> np.ndarray:
        return self._sum(2, "gamma")

    @property
    def ap_sum(self) -> np.ndarray:
        return self._sum(3, "x_ap")

    @property
    def q_peak(self) -> np.ndarray:
        if self.horizon is None:
            return self._peaks[0]
        return self.Q[:self.slots + 1].max(axis=0, initial=0.0)

    @property
    def h_peak(self) -> np.ndarray:
        if self.horizon is None:
            return self._peaks[1]
        return self.H[:self.slots + 1].max(axis=0, initial=0.0)

    # time averages -------------------------------------------------------
    def averages(self) -> dict[str, np.ndarray]:
        n = max(self.slots, 1)
        return {"x": self.x_sum / n, "y": self.y_sum / n, "gamma": self.gamma_sum / n,
                "x_ap": self.ap_sum / n, "x_peer": (self.x_sum - self.ap_sum) / n}

    def utility(self) -> float:
        """Total utility of the running-average download rates."""
        xbar = self.averages()["x"]
        return float(sum(c.utility.value(float(v)) for c, v in zip(self.cfgs, xbar)))

    @property
    def ap_packets(self) -> int:
        return int(round(self.ap_sum.sum()))

    @property
    def peer_packets(self) -> int:
        return int(round(self.x_sum.sum() - self.ap_sum.sum()))

    def phase_throughput(self) -> dict[int, dict[str, float]]:
        """Per-user throughput per phase, split by source."""
        K = max(self.n_users, 1)
        out = {}
        for phase, (slots, ap, peer) in sorted(self.phases.items()):
            out[phase] = {"slots": slots, "ap": ap / (slots * K), "peer": peer / (slots * K)}
        return out


@dataclass
class TraceReport:
    q_bound_pass: bool
    norm_bound_pass: bool
    max_Q: list[float]
    Q_bound: list[float]
    max_theta: float
    theta_bound: float
    max_H: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.q_bound_pass and self.norm_bound_pass


def check_trace(trace: TraceAccumulator, constants: BoundConstants) -> TraceReport:
    """Compare observed queue peaks with the deterministic ceilings."""
    max_Q = trace.q_peak.tolist()
    q_ok = all(q <= b for q, b in zip(max_Q, constants.Q_max))
    max_theta = max(trace.norm) if trace.norm else 0.0
    norm_ok = max_theta <= constants.theta_max
    return TraceReport(q_ok, norm_ok, max_Q, list(constants.Q_max), max_theta,
                       constants.theta_max, float(trace.h_peak.max(initial=0.0)))


def residuals(trace: TraceAccumulator, t: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Window averages of the tit-for-tat and auxiliary-rate slacks over ``[t, t+T)``."""
    if trace.horizon is None:
        raise ValueError("residuals need a trace recorded with a horizon")
    if T < 1 or t < 0 or t + T > trace.slots:
        raise ValueError(f"window [{t}, {t + T}) outside the recorded {trace.slots} slots")
    alpha = np.array([c.alpha for c in trace.cfgs])
    beta = np.array([c.beta for c in trace.cfgs])
    x = trace.x[t:t + T]
    tft = (alpha * x - beta - trace.y[t:t + T]).sum(axis=0) / T
    aux = (trace.gamma[t:t + T] - x).sum(axis=0) / T
    return tft, aux


def window_maxima(trace: TraceAccumulator, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-user maximum of both window residuals over every window start."""
    if trace.horizon is None:
        raise ValueError("window checks need a trace recorded with a horizon")
    n = trace.slots
    if T < 1 or T > n:
        raise ValueError(f"window length {T} does not fit in {n} slots")
    alpha = np.array([c.alpha for c in trace.cfgs])
    beta = np.array([c.beta for c in trace.cfgs])
    x = trace.x[:n].astype(float)
    tft = np.vstack([np.zeros(trace.n_users), np.cumsum(alpha * x - beta - trace.y[:n], axis=0)])
    aux = np.vstack([np.zeros(trace.n_users), np.cumsum(trace.gamma[:n] - x, axis=0)])
    return ((tft[T:] - tft[:-T]).max(axis=0) / T, (aux[T:] - aux[:-T]).max(axis=0) / T)


def check_residuals(trace: TraceAccumulator, constants: BoundConstants,
                    windows: Iterable[int]) -> dict[int, dict]:
    """Window-residual check for each window length; every start position is probed."""
    H_max = np.asarray(constants.H_max)
    Q_max = np.asarray(constants.Q_max)
    out = {}
    for T in windows:
        tft, aux = window_maxima(trace, T)
        out[T] = {
            "tit_for_tat_max": float(tft.max(initial=-math.inf)),
            "aux_max": float(aux.max(initial=-math.inf)),
            "tit_for_tat_pass": bool(np.all(tft <= H_max / T)),
            "aux_pass": bool(np.all(aux <= Q_max / T)),
        }
    return out
