import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import brute
from p2psched import scheduler
from p2psched.files import FileState
from p2psched.oracle import TinyInstance
from p2psched.scheduler import (InvariantViolation, Network, SlotDecision, UserConfig,
                                VirtualQueueState, decide, initial_state,
                                schedule_access_point, schedule_subcell, step,
                                transmission_objective, update_queues, weight)
from p2psched.topology import GridSpec, MobileGrid, TopologyState

CFG = UserConfig(alpha=0.5, beta=0.05, x_max=3)


def _files(holders, n_devices):
    K = len(holders)
    return FileState(tuple(frozenset(h) for h in holders), (True,) * K, (0,) * K, n_devices)


class TestWeight:
    q = VirtualQueueState((4.0, 0.0), (6.0, 2.0))

    def test_user_sender(self):
        assert weight(1, 0, self.q, CFG) == 3

    def test_ap_sender(self):
        assert weight(2, 0, self.q, CFG) == 1

    def test_negative_for_ap(self):
        q = VirtualQueueState((1.0,), (10.0,))
        assert weight(1, 0, q, CFG) < 0


class TestAccessPoint:
    def test_argmax(self):
        omega = TopologyState((0, 0, 0), {(2, 0): 2, (2, 1): 1}, 2, 1)
        q = VirtualQueueState((5.0, 10.0), (2.0, 0.0))
        files = _files([{2}, {2}], 3)
        assert schedule_access_point(2, omega, q, files, (CFG, CFG)) == (1, 1)

    def test_all_negative(self):
        omega = TopologyState((0, 0, 0), {(2, 0): 2, (2, 1): 1}, 2, 1)
        q = VirtualQueueState((1.0, 1.0), (10.0, 10.0))
        assert schedule_access_point(2, omega, q, _files([{2}, {2}], 3), (CFG, CFG)) is None

    def test_masked_by_holders(self):
        omega = TopologyState((0, 0), {(1, 0): 2}, 1, 1)
        q = VirtualQueueState((5.0,), (0.0,))
        assert schedule_access_point(1, omega, q, _files([set()], 2), (CFG,)) is None

    def test_tie_lowest_id(self):
        omega = TopologyState((0, 0, 0), {(2, 0): 1, (2, 1): 1}, 2, 1)
        q = VirtualQueueState((3.0, 3.0), (0.0, 0.0))
        assert schedule_access_point(2, omega, q, _files([{2}, {2}], 3), (CFG, CFG)) == (0, 1)


class TestSubcell:
    def test_single_pair(self):
        omega = TopologyState((0, 0), {}, 2, 1, peer_rate=1)
        q = VirtualQueueState((4.0, 0.0), (6.0, 2.0))
        assert schedule_subcell(0, omega, q, _files([{1}, set()], 2), (CFG, CFG)) == (1, 0, 1)

    def test_negative_pair(self):
        omega = TopologyState((0, 0), {}, 2, 1, peer_rate=1)
        q = VirtualQueueState((0.0, 0.0), (1.0, 0.0))
        assert schedule_subcell(0, omega, q, _files([{1}, set()], 2), (CFG, CFG)) is None

    def test_tie_lexicographic(self):
        omega = TopologyState((0, 0, 0), {}, 3, 1, peer_rate=1)
        q = VirtualQueueState((6.0, 6.0, 6.0), (0.0, 0.0, 0.0))
        files = _files([{2}, {0}, set()], 3)
        assert schedule_subcell(0, omega, q, files, (CFG,) * 3) == (0, 1, 1)

    def test_ap_and_peer_same_cell(self):
        omega = TopologyState((0, 0, 0), {(2, 0): 1}, 2, 1, peer_rate=1)
        q = VirtualQueueState((5.0, 0.0), (0.0, 1.0))
        d = decide(omega, q, _files([{1, 2}, set()], 3), (CFG, CFG), 10)
        assert d.mu == {(2, 0): 1, (1, 0): 1}
        assert d.x == (2, 0) and d.y == (0, 1) and d.x_ap == (1, 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([0.5, 2.0, 4.0, 8.0]))
    def test_scaling_invariance(self, seed, c):
        omega, q, files, cfgs = brute.random_small_state(random.Random(seed))
        scaled = VirtualQueueState(tuple(c * v for v in q.Q), tuple(c * v for v in q.H))
        for cell in range(omega.n_cells):
            assert (schedule_subcell(cell, omega, q, files, cfgs)
                    == schedule_subcell(cell, omega, scaled, files, cfgs))


class TestQueues:
    def test_update_examples(self):
        q = VirtualQueueState((5.0, 0.0), (3.0, 0.0))
        d = SlotDecision((3.0, 0.0), {}, (2, 0), (0, 4), (0, 0))
        new = update_queues(q, d, (CFG, CFG))
        assert new.H[0] == pytest.approx(3.95) and new.H[1] == 0
        assert update_queues(VirtualQueueState((5.0,), (0.0,)),
                             SlotDecision((3.0,), {}, (3,), (0,), (0,)), (CFG,)).Q == (5.0,)


class TestDecomposition:
    def test_matches_exhaustive_search(self):
        rnd = random.Random(12345)
        for _ in range(300):
            omega, q, files, cfgs = brute.random_small_state(rnd)
            d = decide(omega, q, files, cfgs, 10)
            assert brute.feasible(d.mu, omega, [c.x_max for c in cfgs])
            assert brute.objective(d.mu, omega, q, files, cfgs) == brute.best_objective(
                omega, q, files, cfgs)
            assert transmission_objective(d.mu, q, files, cfgs) == float(
                brute.objective(d.mu, omega, q, files, cfgs))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10**9))
    def test_xy_consistency(self, seed):
        omega, q, files, cfgs = brute.random_small_state(random.Random(seed))
        d = decide(omega, q, files, cfgs, 5)
        K = omega.n_users
        assert sum(d.x) == sum(v for (n, k), v in d.mu.items() if n in files.holders[k])
        assert sum(d.y) == sum(v for (n, k), v in d.mu.items() if n < K and n in files.holders[k])
        for (n, k) in d.mu:
            if n >= K:
                assert weight(n, k, q, cfgs[k]) >= 0


def _one_user_instance():
    omega = TopologyState((0, 0), {(1, 0): 1}, 1, 1)
    return TinyInstance((omega,), (1.0,), (UserConfig(alpha=0.5, beta=0.05, x_max=3),),
                        (frozenset({1}),))


class TestStep:
    def test_hand_traced_slot(self):
        inst = _one_user_instance()
        rng = np.random.default_rng(0)
        state = initial_state(inst.network(), inst.files(), rng, VirtualQueueState((5.0,), (0.0,)))
        new, m = step(state, 10, rng)
        assert m.decision.mu == {(1, 0): 1} and m.decision.x == (1,)
        assert m.decision.gamma == (pytest.approx(1.0),)
        assert new.queues.Q == (pytest.approx(5.0),)
        assert new.queues.H == (pytest.approx(0.45),)

    def test_zero_V(self):
        inst = _one_user_instance()
        rng = np.random.default_rng(0)
        state = initial_state(inst.network(), inst.files(), rng)
        for _ in range(5):
            state, m = step(state, 0, rng)
            assert m.decision.gamma == (0.0,)

    def test_empty_network(self):
        net = Network(MobileGrid(GridSpec(2, 2), 0, 0), ())
        rng = np.random.default_rng(0)
        state = initial_state(net, FileState((), (), (), 0), rng)
        state, m = step(state, 10, rng)
        assert m.decision.mu == {} and m.decision.x == ()

    def test_network_rejects_small_x_max(self):
        with pytest.raises(ValueError, match="x_max"):
            Network(MobileGrid(GridSpec(2, 2), 2), [UserConfig(x_max=2)] * 2)

    def test_infeasible_matrix_is_invariant_violation(self, monkeypatch):
        inst = _one_user_instance()
        rng = np.random.default_rng(0)
        state = initial_state(inst.network(), inst.files(), rng)
        monkeypatch.setattr(scheduler, "decide", lambda *a: SlotDecision(
            (0.0,), {(1, 0): 2}, (2,), (0,), (2,)))
        with pytest.raises(InvariantViolation):
            step(state, 10, rng)

    def test_finite_mode_completion(self):
        omega = TopologyState((0, 0), {(1, 0): 1}, 1, 1)
        inst = TinyInstance((omega,), (1.0,), (UserConfig(x_max=3),), (frozenset({1}),))
        files = FileState((frozenset({1}),), (True,), (3,), 2, finite=True)
        rng = np.random.default_rng(0)
        state = initial_state(inst.network(), files, rng)
        got = 0
        for _ in range(10):
            state, m = step(state, 10, rng)
            got += m.decision.x[0]
        assert got == 3 and not state.files.active[0]
