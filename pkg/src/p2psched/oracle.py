"""Brute-force optimal utility on tiny instances, for checking the optimality gap.

A tiny instance lists its topology states with explicit stationary
probabilities. The best achievable time-average utility is the maximum,
over one probability distribution on the feasible transmission matrices per
state, of ``sum_k phi_k(xbar_k)`` subject to ``alpha_k xbar_k <= beta_k + ybar_k``.
Achievable averages are linear in the mixing weights, so the problem is a
concave maximization over a polytope, solved here by tangent cutting planes.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .files import FileState
from .scheduler import Network, UserConfig, VirtualQueueState, initial_state, step
from .topology import TopologyState, TransmissionMatrix, validate_feasible
from .utility import parse_utility


class InstanceTooLarge(ValueError):
    """Enumeration size exceeds the configured cap."""


def enumerate_feasible(omega: TopologyState, x_max: Sequence[int],
                       cap: int = 100_000) -> list[TransmissionMatrix]:
    """Every transmission matrix allowed in topology state ``omega``.

    Candidates are built as one optional receiver per access point and one
    optional ordered co-located pair per subcell, each at its full channel
    rate; the candidates are then filtered through :func:`validate_feasible`.
    """
    K = omega.n_users
    options: list[list[tuple[int, int, int] | None]] = []
    for ap in omega.access_points:
        options.append([None] + [(ap, k, omega.rate(ap, k)) for k in range(K)
                                 if omega.rate(ap, k) > 0])
    for cell, users in sorted(omega.members.items()):
        pairs = [(a, k, omega.rate(a, k)) for a in users for k in users
                 if a != k and omega.rate(a, k) > 0]
        options.append([None] + pairs)
    size = math.prod(len(o) for o in options)
    if size > cap:
        raise InstanceTooLarge(f"{size} candidate matrices exceed the cap of {cap}")
    out = []
    for combo in itertools.product(*options):
        mu = {(n, k): r for n, k, r in filter(None, combo)}
        if validate_feasible(mu, omega, x_max):
            out.append(mu)
    return out


@dataclass
class TinyInstance:
    """Finite topology-state distribution with static holder sets.

    Also serves as the topology process of a simulation: every slot draws a
    state independently with the listed probabilities.
    """

    states: tuple[TopologyState, ...]
    probabilities: tuple[float, ...]
    users: tuple[UserConfig, ...]
    holders: tuple[frozenset[int], ...]

    def __post_init__(self):
        self.states = tuple(self.states)
        self.probabilities = tuple(float(p) for p in self.probabilities)
        self.users = tuple(self.users)
        self.holders = tuple(frozenset(h) for h in self.holders)
        if not self.states or len(self.states) != len(self.probabilities):
            raise ValueError("need one probability per topology state")
        if min(self.probabilities) < 0 or abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise ValueError("state probabilities must be non-negative and sum to 1")
        K = len(self.users)
        N = self.states[0].n_devices
        for s in self.states:
            s.validate()
            if s.n_users != K or s.n_devices != N:
                raise ValueError("every state must have the same users and devices")
            if s.positions[K:] != self.states[0].positions[K:]:
                raise ValueError("access points cannot move between states")
        if len(self.holders) != K:
            raise ValueError("need one holder set per user")
        self._cdf = list(itertools.accumulate(self.probabilities))

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_devices(self) -> int:
        return self.states[0].n_devices

    def files(self) -> FileState:
        K = self.n_users
        return FileState(self.holders, (True,) * K, (0,) * K, self.n_devices)

    # topology-process protocol ------------------------------------------
    def initial(self, rng: np.random.Generator) -> TopologyState:
        return self.states[0]

    def advance(self, state: TopologyState, rng: np.random.Generator) -> TopologyState:
        if len(self.states) == 1:
            return self.states[0]
        i = bisect.bisect_right(self._cdf, rng.random())
        return self.states[min(i, len(self.states) - 1)]

    def max_incoming(self) -> int:
        worst = 0
        for s in self.states:
            for k in range(s.n_users):
                from_aps = sum(s.rate(ap, k) for ap in s.access_points)
                from_peer = max((s.rate(a, k) for a in range(s.n_users)), default=0)
                worst = max(worst, from_aps + from_peer)
        return worst

    def upload_cap(self) -> int:
        return max((s.rate(a, k) for s in self.states for a in range(s.n_users)
                    for k in range(s.n_users)), default=0)

    def network(self) -> Network:
        return Network(self, self.users)


def rate_vectors(inst: TinyInstance, omega: TopologyState, cap: int = 100_000) -> np.ndarray:
    """Distinct ``(x_1..x_K, y_1..y_K)`` rows achievable in one state."""
    K = inst.n_users
    rows = set()
    for mu in enumerate_feasible(omega, [u.x_max for u in inst.users], cap):
        x, y = [0] * K, [0] * K
        for (n, k), packets in mu.items():
            if n in inst.holders[k]:
                x[k] += packets
                if n < K:
                    y[n] += packets
        rows.add(tuple(x + y))
    return np.array(sorted(rows), dtype=float)


@dataclass(frozen=True)
class Optimum:
    """Solution of the utility-maximization problem on a tiny instance.

    ``value`` is attained by the rates ``x``, ``y`` of a feasible mixture;
    ``upper`` is a certified upper bound on the optimum.
    """

    value: float
    upper: float
    x: tuple[float, ...]
    y: tuple[float, ...]
    cuts: int


def _cut(u, a: float) -> tuple[float, float]:
    """Tangent ``t <= intercept + slope * x`` of the concave utility at ``a``."""
    slope = u.slope(a)
    return slope, u.value(a) - slope * a


def solve_optimum(inst: TinyInstance, tol: float = 1e-6, cap: int = 100_000,
                  max_rounds: int = 500) -> Optimum:
    """Maximize total utility over stationary randomized policies of ``inst``.

    Each state contributes one probability vector over its achievable rate
    rows, so achievable ``(xbar, ybar)`` are linear in the mixing weights.
    Every concave utility is replaced by the minimum of its tangents at a
    growing set of points; the resulting LP over-estimates the optimum and
    its solution is feasible for the true problem. New tangents are added at
    the LP solution until the two values agree to within ``tol``.
    """
    from scipy.optimize import linprog

    K = inst.n_users
    blocks = [rate_vectors(inst, s, cap) for s in inst.states]
    cols = np.hstack([p * b.T for p, b in zip(inst.probabilities, blocks)])  # (2K, W)
    Mx, My = cols[:K], cols[K:]
    W = cols.shape[1]
    A_eq = np.zeros((len(blocks), W + K))
    at = 0
    for i, b in enumerate(blocks):
        A_eq[i, at:at + len(b)] = 1.0
        at += len(b)
    alpha = np.array([u.alpha for u in inst.users])
    beta = np.array([u.beta for u in inst.users])
    tft = np.hstack([alpha[:, None] * Mx - My, np.zeros((K, K))])
    utilities = [u.utility for u in inst.users]
    cuts: list[list[float]] = []
    for u, cfg in zip(utilities, inst.users):
        lo = 0.0 if math.isfinite(u.slope(0.0)) else cfg.x_max / 64
        cuts.append(list(np.linspace(lo, cfg.x_max, 7)))
    c = np.concatenate([np.zeros(W), -np.ones(K)])
    bounds = [(0.0, None)] * W + [(None, None)] * K
    best: Optimum | None = None
    for _ in range(max_rounds):
        rows, rhs = [tft], [beta]
        for k, (u, points) in enumerate(zip(utilities, cuts)):
            for a in points:
                slope, intercept = _cut(u, a)
                row = np.zeros(W + K)
                row[:W] = -slope * Mx[k]
                row[W + k] = 1.0
                rows.append(row[None, :])
                rhs.append(np.array([intercept]))
        res = linprog(c, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), A_eq=A_eq,
                      b_eq=np.ones(len(blocks)), bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"linear program failed: {res.message}")
        w = res.x[:W]
        x, y = Mx @ w, My @ w
        value = sum(u.value(float(v)) for u, v in zip(utilities, x))
        upper = -float(res.fun) if best is None else min(best.upper, -float(res.fun))
        if best is None or value > best.value:
            best = Optimum(value, upper, tuple(x.tolist()), tuple(y.tolist()),
                           sum(map(len, cuts)))
        else:
            best = replace(best, upper=upper)
        if best.upper - best.value <= tol:
            return best
        added = False
        for k, u in enumerate(utilities):
            a = max(float(x[k]), cuts[k][0])
            if res.x[W + k] - u.value(float(x[k])) > 1e-12 and a not in cuts[k]:
                cuts[k].append(a)
                added = True
        if not added:
            return best  # gap is down to the LP solver's own tolerance
    raise RuntimeError("cutting-plane refinement did not converge")


def optimal_utility(inst: TinyInstance, tol: float = 1e-6, cap: int = 100_000) -> float:
    """Best achievable time-average utility of a tiny instance."""
    return solve_optimum(inst, tol, cap).value


def gap_curve(inst: TinyInstance, V_values: Sequence[float], slots: int, seed: int = 0,
              phi_star: float | None = None) -> list[tuple[float, float, float]]:
    """Run the controller on the instance for each ``V``.

    Returns ``(V, sum_k phi_k(xbar_k), phi_star)`` rows, where ``xbar`` is the
    average over all ``slots`` slots from empty queues.
    """
    if phi_star is None:
        phi_star = optimal_utility(inst)
    net = inst.network()
    out = []
    for V in V_values:
        rng = np.random.default_rng(seed)
        state = initial_state(net, inst.files(), rng, VirtualQueueState.zeros(inst.n_users))
        received = [0] * inst.n_users
        for _ in range(slots):
            state, m = step(state, V, rng)
            for k, got in enumerate(m.decision.x):
                received[k] += got
        achieved = sum(u.utility.value(r / slots) for u, r in zip(inst.users, received))
        out.append((float(V), achieved, phi_star))
    return out


def _parse_links(text: str) -> dict[tuple[int, int], int]:
    links = {}
    for chunk in filter(None, (c.strip() for c in text.split(","))):
        pair, _, rate = chunk.partition(":")
        sender, _, receiver = pair.partition(">")
        if int(rate) > 0:
            links[int(sender), int(receiver)] = int(rate)
    return links


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def tiny_instance_from_kv(kv: Mapping[str, str]) -> TinyInstance:
    """Build an instance from flat ``key = value`` pairs.

    Keys: ``users``, ``access_points``, ``cells``, user defaults ``alpha``,
    ``beta``, ``x_max``, ``utility``, ``nu``, ``theta`` (overridable per user as
    ``user.<k>.<field>``), ``holders.<k>`` (device ids), and per state
    ``state.<i>.prob``, ``state.<i>.positions`` (one cell per device) and
    ``state.<i>.channels`` (``sender>receiver:rate`` list).
    """
    K = int(kv["users"])
    n_aps = int(kv.get("access_points", 0))
    cells = int(kv.get("cells", 1))
    users = []
    for k in range(K):
        def get(name, default, k=k):
            return kv.get(f"user.{k}.{name}", kv.get(name, default))
        theta = get("theta", None)
        users.append(UserConfig(
            alpha=float(get("alpha", 0.5)), beta=float(get("beta", 0.05)),
            x_max=int(get("x_max", 3)),
            utility=parse_utility(get("utility", "log1p"), float(get("nu", 1.0)),
                                  None if theta is None else float(theta))))
    holders = [frozenset(_ints(kv.get(f"holders.{k}", ""))) for k in range(K)]
    idx = sorted({int(key.split(".")[1]) for key in kv if key.startswith("state.")})
    if not idx:
        raise ValueError("tiny instance needs at least one state.<i> block")
    states, probs = [], []
    for i in idx:
        positions = _ints(kv[f"state.{i}.positions"])
        if len(positions) != K + n_aps:
            raise ValueError(f"state.{i}.positions needs {K + n_aps} entries")
        channels = _parse_links(kv.get(f"state.{i}.channels", ""))
        states.append(TopologyState(tuple(positions), channels, K, cells))
        probs.append(float(kv.get(f"state.{i}.prob", 1.0)))
    return TinyInstance(tuple(states), tuple(probs), tuple(users), tuple(holders))
