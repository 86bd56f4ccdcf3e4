"""Cell-partitioned topology process: device positions, channel rates, feasibility.

Devices are indexed with users first (``0..K-1``) and access points after
them (``K..N-1``). A topology state carries the subcell of every device and
the positive entries of the channel matrix ``S[n, k]`` (packets per slot
that device ``n`` could send to user ``k`` absent competing transmissions).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

# (sender, receiver) -> packets
TransmissionMatrix = dict[tuple[int, int], int]

_DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid of subcells with a lazy random-walk parameter."""

    rows: int
    cols: int
    stay_probability: float = 0.5

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if not 0.0 <= self.stay_probability <= 1.0:
            raise ValueError(f"stay_probability must lie in [0, 1], got {self.stay_probability}")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @cached_property
    def move_table(self) -> np.ndarray:
        """Destination of each of the four compass moves from each cell.

        A move that would leave the grid maps back to the originating cell.
        """
        table = np.empty((self.n_cells, 4), dtype=np.int64)
        for cell in range(self.n_cells):
            r, c = divmod(cell, self.cols)
            for d, (dr, dc) in enumerate(_DIRECTIONS):
                rr, cc = r + dr, c + dc
                inside = 0 <= rr < self.rows and 0 <= cc < self.cols
                table[cell, d] = rr * self.cols + cc if inside else cell
        return table

    def neighbors(self, cell: int) -> list[int]:
        """In-grid 4-neighbors of ``cell``."""
        return sorted({int(d) for d in self.move_table[cell] if d != cell})


def mobility_transition_matrix(grid: GridSpec) -> np.ndarray:
    """Exact one-step transition matrix of the walk used by :func:`step_mobility`."""
    n = grid.n_cells
    move = (1.0 - grid.stay_probability) / 4.0
    P = np.zeros((n, n))
    for cell in range(n):
        P[cell, cell] += grid.stay_probability
        for dest in grid.move_table[cell]:
            P[cell, dest] += move
    return P


@dataclass(frozen=True)
class TopologyState:
    """One slot's topology snapshot: positions and channel rates.

    ``channels`` maps ``(sender, receiver)`` to an explicit positive rate.
    On top of those, any user not in ``peer_off`` reaches every other user in
    its subcell at ``peer_rate``. Pairs covered by neither have rate 0.
    """

    positions: tuple[int, ...]
    channels: Mapping[tuple[int, int], int]
    n_users: int
    n_cells: int
    peer_rate: int = 0
    peer_off: frozenset[int] = frozenset()

    def validate(self) -> "TopologyState":
        """Raise ValueError on out-of-range positions or channel entries; return self."""
        if self.n_users < 0 or self.n_users > len(self.positions):
            raise ValueError("n_users must not exceed the number of devices")
        for n, cell in enumerate(self.positions):
            if not 0 <= cell < self.n_cells:
                raise ValueError(f"device {n} sits in cell {cell}, outside [0, {self.n_cells})")
        if self.peer_rate < 0:
            raise ValueError("peer rate must be non-negative")
        for (n, k), rate in self.channels.items():
            if rate < 0:
                raise ValueError(f"negative channel rate on ({n}, {k})")
            if not (0 <= n < len(self.positions) and 0 <= k < self.n_users):
                raise ValueError(f"channel entry ({n}, {k}) out of range")
        return self

    @property
    def n_devices(self) -> int:
        return len(self.positions)

    @property
    def access_points(self) -> range:
        return range(self.n_users, self.n_devices)

    def is_user(self, n: int) -> bool:
        return n < self.n_users

    def rate(self, sender: int, receiver: int) -> int:
        r = self.channels.get((sender, receiver), 0)
        if r or not self.peer_rate:
            return r
        if (sender < self.n_users and sender != receiver and sender not in self.peer_off
                and self.positions[sender] == self.positions[receiver]):
            return self.peer_rate
        return 0

    @cached_property
    def members(self) -> dict[int, list[int]]:
        """Users grouped by subcell (occupied cells only), ascending ids."""
        cells: dict[int, list[int]] = defaultdict(list)
        for k in range(self.n_users):
            cells[self.positions[k]].append(k)
        return dict(cells)

    def channel_matrix(self) -> np.ndarray:
        S = np.zeros((self.n_devices, self.n_users), dtype=np.int64)
        for users in self.members.values():
            for a in users:
                for k in users:
                    S[a, k] = self.rate(a, k)
        for (n, k), rate in self.channels.items():
            S[n, k] = rate
        return S


def step_mobility(state: TopologyState, grid: GridSpec, rng: np.random.Generator) -> TopologyState:
    """Move every user one step of the lazy walk; access points stay put.

    Each user stays with probability ``grid.stay_probability``; otherwise it
    picks one of the four compass directions uniformly and stays where it is
    if that direction leaves the grid. Channels are carried over unchanged;
    call :func:`sample_channels` afterwards.
    """
    K = state.n_users
    if K == 0:
        return state
    pos = np.asarray(state.positions[:K], dtype=np.int64)
    u = rng.random((2, K))
    direction = np.minimum((u[1] * 4).astype(np.int64), 3)
    moved = np.where(u[0] < grid.stay_probability, pos, grid.move_table[pos, direction])
    positions = tuple(moved.tolist()) + tuple(state.positions[K:])
    return TopologyState(positions, state.channels, K, state.n_cells, state.peer_rate,
                         state.peer_off)


def sample_channels(
    state: TopologyState,
    rng: np.random.Generator,
    peer_rate: int = 1,
    ap_rates: Sequence[int] = (0, 1, 2),
    peer_off: frozenset[int] = frozenset(),
) -> TopologyState:
    """Redraw channel rates for the current positions.

    Access-point rates are i.i.d. uniform over ``ap_rates``. A user can reach
    another user at ``peer_rate`` only when both sit in the same subcell and
    the sender is not in ``peer_off``.
    """
    K = state.n_users
    channels: dict[tuple[int, int], int] = {}
    n_aps = state.n_devices - K
    if n_aps and K:
        support = np.asarray(ap_rates, dtype=np.int64)
        draws = support[rng.integers(0, len(support), size=(n_aps, K))].tolist()
        for ap, row in enumerate(draws, start=K):
            channels.update({(ap, k): rate for k, rate in enumerate(row) if rate > 0})
    out = TopologyState(state.positions, channels, K, state.n_cells, peer_rate,
                        frozenset(peer_off))
    if "members" in state.__dict__:
        out.__dict__["members"] = state.members  # same positions, reuse the cached grouping
    return out


def users_in_reach(ap: int, omega: TopologyState) -> set[int]:
    """Users the access point can reach this slot (positive channel rate)."""
    return {k for k in range(omega.n_users) if omega.rate(ap, k) > 0}


def validate_feasible(mu: Mapping[tuple[int, int], int], omega: TopologyState,
                      x_max: Sequence[int]) -> bool:
    """Check a transmission matrix against the cell-partitioned structural rules."""
    K = omega.n_users
    received = [0] * K
    peer_cells: set[int] = set()
    ap_busy: set[int] = set()
    for (n, k), packets in mu.items():
        if not (0 <= n < omega.n_devices and 0 <= k < K):
            return False
        if packets == 0:
            continue
        if packets != omega.rate(n, k):
            return False
        if n < K:
            cell = omega.positions[n]
            if cell != omega.positions[k] or cell in peer_cells:
                return False
            peer_cells.add(cell)
        else:
            if n in ap_busy:
                return False
            ap_busy.add(n)
        received[k] += packets
    return all(r <= cap for r, cap in zip(received, x_max))


@dataclass
class MobileGrid:
    """Topology process for the cell-partitioned mobile network.

    Users start uniformly placed and then follow :func:`step_mobility`;
    channels are redrawn every slot with :func:`sample_channels`. Access
    points sit in ``ap_cells`` (cell 0 by default) but their reach is
    governed by the channel draw alone.
    """

    grid: GridSpec
    n_users: int
    n_access_points: int = 1
    peer_rate: int = 1
    ap_rates: tuple[int, ...] = (0, 1, 2)
    ap_cells: tuple[int, ...] | None = None
    peer_off: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_users < 0 or self.n_access_points < 0:
            raise ValueError("device counts must be non-negative")
        if self.peer_rate < 0 or min(self.ap_rates, default=0) < 0:
            raise ValueError("channel rates must be non-negative")
        if self.ap_cells is None:
            self.ap_cells = (0,) * self.n_access_points
        if len(self.ap_cells) != self.n_access_points:
            raise ValueError("need one cell per access point")

    def max_incoming(self) -> int:
        """Largest number of packets any user can be offered in one slot."""
        return self.n_access_points * max(self.ap_rates, default=0) + self.peer_rate

    def upload_cap(self) -> int:
        """Largest number of packets a user can send in one slot."""
        return self.peer_rate

    def initial(self, rng: np.random.Generator) -> TopologyState:
        users = rng.integers(0, self.grid.n_cells, size=self.n_users).tolist()
        state = TopologyState(tuple(users) + tuple(self.ap_cells), {}, self.n_users,
                              self.grid.n_cells).validate()
        return self._channels(state, rng)

    def advance(self, state: TopologyState, rng: np.random.Generator) -> TopologyState:
        return self._channels(step_mobility(state, self.grid, rng), rng)

    def _channels(self, state, rng):
        return sample_channels(state, rng, self.peer_rate, self.ap_rates, self.peer_off)
