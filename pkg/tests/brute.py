"""Independent brute-force references used by several test modules.

Nothing here calls into the package's feasibility or weight code: rates,
feasibility and the max-weight objective are recomputed from first
principles so they can serve as oracles.
"""

import itertools
import random
from fractions import Fraction

from p2psched.files import FileState
from p2psched.scheduler import UserConfig, VirtualQueueState
from p2psched.topology import TopologyState


def rate(omega: TopologyState, n: int, k: int) -> int:
    K = omega.n_users
    if n == k:
        return 0
    if n >= K:
        return omega.channels.get((n, k), 0)
    explicit = omega.channels.get((n, k), 0)
    if explicit:
        return explicit
    same = omega.positions[n] == omega.positions[k]
    return omega.peer_rate if same and n not in omega.peer_off else 0


def feasible(mu: dict, omega: TopologyState, x_max) -> bool:
    K = omega.n_users
    peer_cells = []
    ap_sends = {}
    got = [0] * K
    for (n, k), v in mu.items():
        if v == 0:
            continue
        if v != rate(omega, n, k):
            return False
        if n < K:
            if omega.positions[n] != omega.positions[k]:
                return False
            peer_cells.append(omega.positions[n])
        else:
            ap_sends[n] = ap_sends.get(n, 0) + 1
        got[k] += v
    return (len(peer_cells) == len(set(peer_cells)) and all(c <= 1 for c in ap_sends.values())
            and all(g <= x for g, x in zip(got, x_max)))


def objective(mu: dict, omega, queues, files, cfgs) -> Fraction:
    K = omega.n_users
    total = Fraction(0)
    for (n, k), v in mu.items():
        if v and n in files.holders[k]:
            w = (Fraction(queues.Q[k]) - Fraction(cfgs[k].alpha) * Fraction(queues.H[k])
                 + (Fraction(queues.H[n]) if n < K else 0))
            total += v * w
    return total


def best_objective(omega, queues, files, cfgs) -> Fraction:
    """Maximum of the max-weight objective over every feasible matrix, by exhaustion."""
    K, N = omega.n_users, omega.n_devices
    entries = [(n, k) for n in range(N) for k in range(K) if n != k and rate(omega, n, k) > 0]
    x_max = [c.x_max for c in cfgs]
    best = Fraction(0)  # the empty matrix is always feasible
    for mask in itertools.product((0, 1), repeat=len(entries)):
        mu = {e: rate(omega, *e) for e, bit in zip(entries, mask) if bit}
        if feasible(mu, omega, x_max):
            best = max(best, objective(mu, omega, queues, files, cfgs))
    return best


def random_small_state(rnd: random.Random):
    """Random state with at most 3 users, 2 cells and 1 access point; dyadic queues."""
    K = rnd.randint(1, 3)
    cells = rnd.randint(1, 2)
    A = rnd.randint(0, 1)
    N = K + A
    positions = tuple(rnd.randrange(cells) for _ in range(N))
    channels = {}
    for ap in range(K, N):
        for k in range(K):
            r = rnd.choice((0, 1, 2))
            if r:
                channels[ap, k] = r
    for a in range(K):
        for k in range(K):
            if a != k and positions[a] == positions[k] and rnd.random() < 0.2:
                channels[a, k] = 2  # occasional explicit faster peer link
    peer_off = frozenset(k for k in range(K) if rnd.random() < 0.15)
    omega = TopologyState(positions, channels, K, cells, 1, peer_off).validate()
    holders = tuple(frozenset(n for n in range(N) if n != k and rnd.random() < 0.7)
                    for k in range(K))
    files = FileState(holders, (True,) * K, (0,) * K, N)
    dyadic = [i / 8 for i in range(0, 65)]
    queues = VirtualQueueState(tuple(rnd.choice(dyadic) for _ in range(K)),
                               tuple(rnd.choice(dyadic) for _ in range(K)))
    cfgs = tuple(UserConfig(alpha=rnd.choice((0, 0.25, 0.5, 0.75, 1, 1.5)), beta=0.05, x_max=5)
                 for _ in range(K))
    return omega, queues, files, cfgs
