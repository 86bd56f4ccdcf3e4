"""Drift-plus-penalty controller with reputation (tit-for-tat) queues.

Every slot each user picks an auxiliary rate ``gamma_k`` from its data queue
``Q_k``, each access point serves the single reachable user with the largest
positive ``S * (Q_k - alpha_k H_k)``, each subcell activates the single
co-located pair with the largest ``S * (Q_k + H_a - alpha_k H_k)``, and then
both virtual queues are updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .files import (FileSizes, FileState, PhaseSchedule, apply_delivery,
                    regenerate_requests, wake_idle)
from .topology import TopologyState, TransmissionMatrix, validate_feasible
from .utility import LogOnePlus, Utility


class InvariantViolation(AssertionError):
    """The controller produced a state the algorithm guarantees cannot happen."""


@dataclass(frozen=True)
class UserConfig:
    alpha: float = 0.5
    beta: float = 0.05
    x_max: int = 3
    utility: Utility = field(default_factory=LogOnePlus)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if int(self.x_max) != self.x_max or self.x_max < 1:
            raise ValueError(f"x_max must be a positive integer, got {self.x_max}")
        theta = getattr(self.utility, "theta", None)
        if theta is not None and theta > self.x_max:
            raise ValueError("piecewise-linear target rate theta must not exceed x_max")


@dataclass(frozen=True)
class VirtualQueueState:
    """Data queues ``Q`` and reputation queues ``H``, one entry per user."""

    Q: tuple[float, ...]
    H: tuple[float, ...]

    @classmethod
    def zeros(cls, n_users: int) -> "VirtualQueueState":
        return cls((0.0,) * n_users, (0.0,) * n_users)

    def __post_init__(self):
        if len(self.Q) != len(self.H):
            raise ValueError("Q and H must have the same length")


@dataclass(frozen=True)
class SlotDecision:
    gamma: tuple[float, ...]
    mu: TransmissionMatrix
    x: tuple[int, ...]
    y: tuple[int, ...]
    x_ap: tuple[int, ...]  # part of x sent by access points


@dataclass(frozen=True)
class _Params:
    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    x_max: tuple[int, ...]
    gamma_rules: tuple


_PARAM_CACHE: dict[int, tuple[Sequence[UserConfig], _Params]] = {}


def _params(cfgs: Sequence[UserConfig]) -> _Params:
    # per-slot hot path: reuse the flattened parameters of the same config sequence
    hit = _PARAM_CACHE.get(id(cfgs))
    if hit is not None and hit[0] is cfgs:
        return hit[1]
    params = _Params(tuple(c.alpha for c in cfgs), tuple(c.beta for c in cfgs),
                     tuple(c.x_max for c in cfgs), tuple(c.utility.gamma for c in cfgs))
    if len(_PARAM_CACHE) > 256:
        _PARAM_CACHE.clear()
    _PARAM_CACHE[id(cfgs)] = (cfgs, params)
    return params


def choose_gamma(u: Utility, Q: float, V: float, x_max: int) -> float:
    """Auxiliary rate maximizing ``V * u(g) - Q * g`` on ``[0, x_max]``."""
    return u.gamma(Q, V, x_max)


def weight(sender: int, k: int, queues: VirtualQueueState, cfg: UserConfig) -> float:
    """Max-weight coefficient for ``sender -> k``; ``sender`` counts as a user if ``< K``."""
    w = queues.Q[k] - cfg.alpha * queues.H[k]
    if sender < len(queues.Q):
        w += queues.H[sender]
    return w


def schedule_access_point(ap: int, omega: TopologyState, queues: VirtualQueueState,
                          files: FileState, cfgs: Sequence[UserConfig]) -> tuple[int, int] | None:
    """Pick the reachable user with the largest non-negative AP weight, lowest id on ties."""
    Q, H, holders = queues.Q, queues.H, files.holders
    alpha = _params(cfgs).alpha
    channels = omega.channels
    best = None
    best_w = 0.0
    for k in range(omega.n_users):
        rate = channels.get((ap, k), 0)
        if rate <= 0 or ap not in holders[k]:
            continue
        w = rate * (Q[k] - alpha[k] * H[k])
        if best is None or w > best_w:
            best, best_w = k, w
    if best is None or best_w < 0:
        return None
    return best, omega.channels[ap, best]


def _best_pairs(omega: TopologyState, queues: VirtualQueueState, files: FileState,
                alpha: Sequence[float], cells=None) -> dict[int, tuple[float, int, int, int]]:
    """Best ``(weight, sender, receiver, rate)`` per subcell over eligible co-located pairs."""
    Q, H, pos = queues.Q, queues.H, omega.positions
    channels, peer_rate, peer_off = omega.channels, omega.peer_rate, omega.peer_off
    peer_holders = files.peer_holders
    best: dict[int, tuple[float, int, int, int]] = {}
    receivers = range(omega.n_users) if cells is None else [
        k for c in cells for k in omega.members.get(c, ())]
    for k in receivers:
        cell = pos[k]
        base = Q[k] - alpha[k] * H[k]
        for a in peer_holders[k]:
            if pos[a] != cell:
                continue
            rate = channels.get((a, k), 0) or (0 if a in peer_off else peer_rate)
            if rate <= 0:
                continue
            w = rate * (base + H[a])
            cur = best.get(cell)
            if cur is None or w > cur[0] or (w == cur[0] and (a, k) < (cur[1], cur[2])):
                best[cell] = (w, a, k, rate)
    return best


def schedule_subcell(cell: int, omega: TopologyState, queues: VirtualQueueState,
                     files: FileState, cfgs: Sequence[UserConfig]) -> tuple[int, int, int] | None:
    """Pick the co-located ordered pair with the largest non-negative weight.

    Only pairs whose sender holds the receiver's file and has a positive rate
    compete. Ties go to the lexicographically smallest ``(sender, receiver)``.
    """
    pick = _best_pairs(omega, queues, files, _params(cfgs).alpha, (cell,)).get(cell)
    if pick is None or pick[0] < 0:
        return None
    return pick[1], pick[2], pick[3]


def decide(omega: TopologyState, queues: VirtualQueueState, files: FileState,
           cfgs: Sequence[UserConfig], V: float) -> SlotDecision:
    """All of one slot's decisions: auxiliary rates and the transmission matrix.

    Access-point and per-subcell choices are independent subproblems, so
    solving each separately maximizes the slot's max-weight objective.
    """
    K = omega.n_users
    p = _params(cfgs)
    gamma = tuple([rule(q, V, xm) for rule, q, xm in zip(p.gamma_rules, queues.Q, p.x_max)])
    mu: TransmissionMatrix = {}
    for ap in omega.access_points:
        pick = schedule_access_point(ap, omega, queues, files, cfgs)
        if pick is not None:
            mu[ap, pick[0]] = pick[1]
    for w, a, k, rate in _best_pairs(omega, queues, files, p.alpha).values():
        if w >= 0:
            mu[a, k] = rate

    x, y, x_ap = [0] * K, [0] * K, [0] * K
    holders = files.holders
    for (n, k), packets in mu.items():
        if n not in holders[k]:
            continue
        x[k] += packets
        if n < K:
            y[n] += packets
        else:
            x_ap[k] += packets
    return SlotDecision(gamma, mu, tuple(x), tuple(y), tuple(x_ap))


def transmission_objective(mu: TransmissionMatrix, queues: VirtualQueueState, files: FileState,
                           cfgs: Sequence[UserConfig]) -> float:
    """Max-weight objective ``sum mu_nk * f_nk * W_nk`` of a transmission matrix."""
    total = 0.0
    for (n, k), packets in mu.items():
        if packets and n in files.holders[k]:
            total += packets * weight(n, k, queues, cfgs[k])
    return total


def update_queues(queues: VirtualQueueState, decision: SlotDecision,
                  cfgs: Sequence[UserConfig]) -> VirtualQueueState:
    """Advance both virtual queues by one slot."""
    p = _params(cfgs)
    H = tuple([
        max(h + a * x - b - y, 0.0)
        for h, a, b, x, y in zip(queues.H, p.alpha, p.beta, decision.x, decision.y)
    ])
    Q = tuple([max(q + g - x, 0.0) for q, g, x in zip(queues.Q, decision.gamma, decision.x)])
    return VirtualQueueState(Q, H)


class TopologyProcess(Protocol):
    def initial(self, rng: np.random.Generator) -> TopologyState: ...
    def advance(self, state: TopologyState, rng: np.random.Generator) -> TopologyState: ...
    def max_incoming(self) -> int: ...
    def upload_cap(self) -> int: ...


@dataclass
class Network:
    """Static description of one simulated system.

    ``schedule`` drives the phase redraws of holder sets; in finite-file mode
    ``sizes`` draws file lengths and ``wake_probability`` lets idle users start
    new requests (0 keeps them idle until the next phase boundary).
    """

    process: TopologyProcess
    users: Sequence[UserConfig]
    schedule: PhaseSchedule | None = None
    sizes: FileSizes = field(default_factory=FileSizes)
    wake_probability: float = 0.0

    def __post_init__(self):
        self.users = tuple(self.users)
        cap = self.process.max_incoming()
        for k, c in enumerate(self.users):
            if c.x_max < cap:
                raise ValueError(
                    f"user {k}: x_max={c.x_max} is below the {cap} packets one slot can offer")


@dataclass(frozen=True)
class SimState:
    network: Network
    topology: TopologyState
    files: FileState
    queues: VirtualQueueState
    t: int = 0


@dataclass(frozen=True)
class SlotMetrics:
    t: int
    decision: SlotDecision
    queues: VirtualQueueState  # after the update, i.e. Theta(t+1)
    phase: int


def step(state: SimState, V: float, rng: np.random.Generator) -> tuple[SimState, SlotMetrics]:
    """Run one slot of the controller and return the successor state."""
    net = state.network
    t = state.t
    files = state.files
    phase = 0
    if net.schedule is not None:
        files = regenerate_requests(files, net.schedule, t, rng, net.sizes)
        phase = net.schedule.phase_at(t)
        if net.wake_probability > 0:
            files = wake_idle(files, net.wake_probability, net.schedule.probability_at(t), rng,
                              net.sizes)
    omega = net.process.advance(state.topology, rng)
    decision = decide(omega, state.queues, files, net.users, V)
    if not validate_feasible(decision.mu, omega, _params(net.users).x_max):
        raise InvariantViolation(f"slot {t}: infeasible transmission matrix {decision.mu}")
    for (n, k) in decision.mu:
        if n >= omega.n_users and weight(n, k, state.queues, net.users[k]) < 0:
            raise InvariantViolation(f"slot {t}: access point {n} served user {k} at negative weight")
    queues = update_queues(state.queues, decision, net.users)
    if files.finite:
        for k, got in enumerate(decision.x):
            if got:
                files = apply_delivery(files, k, got)
    new = SimState(net, omega, files, queues, t + 1)
    return new, SlotMetrics(t, decision, queues, phase)


def initial_state(network: Network, files: FileState, rng: np.random.Generator,
                  queues: VirtualQueueState | None = None) -> SimState:
    topo = network.process.initial(rng)
    if queues is None:
        queues = VirtualQueueState.zeros(len(network.users))
    return SimState(network, topo, files, queues, 0)
