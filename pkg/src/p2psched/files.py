"""Who holds which user's requested file, plus finite-file active/idle state."""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np


class DeliveryFault(RuntimeError):
    """A delivery was attempted to a user with no outstanding request."""


@dataclass(frozen=True)
class FileState:
    """Holder sets ``F_k``, activity flags and remaining demand per user.

    In infinite-file mode every user is active forever and ``remaining`` is
    unused (all zeros).
    """

    holders: tuple[frozenset[int], ...]
    active: tuple[bool, ...]
    remaining: tuple[int, ...]
    n_devices: int
    finite: bool = False

    def __post_init__(self):
        K = len(self.holders)
        if len(self.active) != K or len(self.remaining) != K:
            raise ValueError("holders, active and remaining must have one entry per user")
        for k, F in enumerate(self.holders):
            if k in F:
                raise ValueError(f"user {k} cannot hold its own requested file")
            if self.finite and (self.remaining[k] > 0) != self.active[k]:
                raise ValueError(f"user {k}: active flag disagrees with remaining demand")
            if not self.active[k] and F:
                raise ValueError(f"idle user {k} must have an empty holder set")

    @property
    def n_users(self) -> int:
        return len(self.holders)

    @cached_property
    def peer_holders(self) -> tuple[tuple[int, ...], ...]:
        """Per user, the other users holding its file, ascending."""
        K = self.n_users
        return tuple(tuple(sorted(a for a in F if a < K)) for F in self.holders)


def has_file(a: int, b: int, state: FileState) -> int:
    """1 if device ``a`` holds the file user ``b`` currently wants, else 0."""
    return int(a in state.holders[b])


@dataclass(frozen=True)
class FileSizes:
    """File-size law for finite-file mode: ``fixed`` or ``geometric`` with the given mean."""

    kind: str = "fixed"
    mean: int = 100

    def __post_init__(self):
        if self.kind not in ("fixed", "geometric"):
            raise ValueError(f"unknown file-size law {self.kind!r}")
        if self.mean < 1:
            raise ValueError("mean file size must be at least one packet")

    def draw(self, rng: np.random.Generator, n: int) -> list[int]:
        if self.kind == "fixed":
            return [self.mean] * n
        return rng.geometric(1.0 / self.mean, size=n).tolist()


def draw_requests(p: float, rng: np.random.Generator, n_users: int, n_devices: int,
                  finite: bool = False, sizes: FileSizes = FileSizes()) -> FileState:
    """Draw fresh requests for every user.

    Each other user holds user ``k``'s file independently with probability
    ``p``; every access point holds every file.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"holder probability must lie in [0, 1], got {p}")
    K = n_users
    peers = rng.random((K, K)) < p
    aps = frozenset(range(K, n_devices))
    holders = []
    for k in range(K):
        col = peers[:, k]
        col[k] = False
        holders.append(frozenset(np.flatnonzero(col).tolist()) | aps)
    remaining = tuple(sizes.draw(rng, K)) if finite else (0,) * K
    return FileState(tuple(holders), (True,) * K, remaining, n_devices, finite)


def apply_delivery(state: FileState, k: int, packets: int) -> FileState:
    """Deduct delivered packets from user ``k``'s request; excess is discarded."""
    if packets < 0:
        raise ValueError("packet count must be non-negative")
    if not state.finite:
        return state
    if not state.active[k]:
        if packets == 0:
            return state
        raise DeliveryFault(f"{packets} packets delivered to idle user {k}")
    left = max(state.remaining[k] - packets, 0)
    remaining = state.remaining[:k] + (left,) + state.remaining[k + 1:]
    if left > 0:
        return replace(state, remaining=remaining)
    active = state.active[:k] + (False,) + state.active[k + 1:]
    holders = state.holders[:k] + (frozenset(),) + state.holders[k + 1:]
    return replace(state, holders=holders, active=active, remaining=remaining)


def wake_idle(state: FileState, wake_probability: float, p: float, rng: np.random.Generator,
              sizes: FileSizes = FileSizes()) -> FileState:
    """Give each idle user a new request with probability ``wake_probability``.

    Idle periods are therefore geometric. New holder sets use probability ``p``.
    """
    if not state.finite or wake_probability <= 0.0 or all(state.active):
        return state
    K = state.n_users
    wake = rng.random(K) < wake_probability
    idle_waking = [k for k in range(K) if not state.active[k] and wake[k]]
    if not idle_waking:
        return state
    fresh = draw_requests(p, rng, K, state.n_devices, True, sizes)
    holders, active, remaining = list(state.holders), list(state.active), list(state.remaining)
    for k in idle_waking:
        holders[k], active[k], remaining[k] = fresh.holders[k], True, fresh.remaining[k]
    return replace(state, holders=tuple(holders), active=tuple(active), remaining=tuple(remaining))


@dataclass(frozen=True)
class PhaseSchedule:
    """Piecewise-constant holder probability over a horizon of ``slots``.

    ``phases`` lists ``(fraction, p)``; phase ``i`` starts at
    ``floor(slots * sum(fractions[:i]))``.
    """

    phases: tuple[tuple[Fraction, float], ...]
    slots: int

    def __post_init__(self):
        if not self.phases:
            raise ValueError("at least one phase is required")
        total = sum(Fraction(f) for f, _ in self.phases)
        if abs(total - 1) > Fraction(1, 10**9):
            raise ValueError(f"phase fractions must sum to 1, got {float(total)}")
        for f, p in self.phases:
            if f <= 0 or not 0.0 <= p <= 1.0:
                raise ValueError(f"bad phase ({f}, {p})")
        if self.slots < 1:
            raise ValueError("horizon must be at least one slot")

    @classmethod
    def single(cls, p: float, slots: int) -> "PhaseSchedule":
        return cls(((Fraction(1), p),), slots)

    @cached_property
    def starts(self) -> tuple[int, ...]:
        out, acc = [], Fraction(0)
        for f, _ in self.phases:
            out.append(math.floor(acc * self.slots))
            acc += Fraction(f)
        return tuple(out)

    @cached_property
    def boundaries(self) -> frozenset[int]:
        """Slots after 0 at which holder sets are redrawn."""
        return frozenset(s for s in self.starts[1:] if 0 < s < self.slots)

    def phase_at(self, t: int) -> int:
        return bisect_right(self.starts, t) - 1 if t >= 0 else 0

    def probability_at(self, t: int) -> float:
        return self.phases[self.phase_at(t)][1]


def regenerate_requests(state: FileState, schedule: PhaseSchedule, t: int,
                        rng: np.random.Generator, sizes: FileSizes = FileSizes()) -> FileState:
    """Redraw every holder set when ``t`` opens a new phase; otherwise return ``state``."""
    if t not in schedule.boundaries:
        return state
    return draw_requests(schedule.probability_at(t), rng, state.n_users, state.n_devices,
                         state.finite, sizes)


def parse_phases(text: str) -> tuple[tuple[Fraction, float], ...]:
    """Parse ``"1/3:0.05, 1/3:0.1, 1/3:0.07"`` into phase tuples."""
    phases = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        frac, _, p = chunk.partition(":")
        if not p:
            raise ValueError(f"phase {chunk!r} must look like fraction:probability")
        phases.append((Fraction(frac.strip()), float(p)))
    return tuple(phases)


def holder_counts(state: FileState, peers_only: bool = True) -> Sequence[int]:
    """Number of holders per user, optionally ignoring access points."""
    K = state.n_users
    return [sum(1 for a in F if a < K) if peers_only else len(F) for F in state.holders]
