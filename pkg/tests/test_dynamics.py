"""One-slot system dynamics and the per-source transition kernel."""

import numpy as np
import pytest

from caesim.dynamics import Channel, initial_state, step, sub_kernel
from caesim.sources import MarkovSource


def kernel_cae_expectation(src, i, j, sampled, channel):
    """Brute-force one-slot expected CAE from the enumerated kernel."""
    return sum(p * src.cae[k, jj] for (k, jj), p in sub_kernel(src, (i, j), sampled, channel))


class TestStep:
    def test_delivered_update_carries_pre_transition_state(self, s1):
        # force the transition 1 -> 2 and a certain delivery
        forced = MarkovSource(
            transition=[[0, 1, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]],
            cae=s1.cae,
        )
        rng = np.random.default_rng(0)
        out = step(((0, 2),), 1, [forced], Channel(1.0), rng)
        assert out.next_state == ((1, 0),)
        assert out.cae == 10.0  # cost of estimate 1 while in state 2
        assert out.cost == 1.0
        assert out.channel_ok

    def test_idle_changes_no_estimate_and_costs_nothing(self, s1, s2, channel06):
        rng = np.random.default_rng(1)
        state = ((2, 1), (1, 0))
        for _ in range(200):
            out = step(state, 0, [s1, s2], channel06, rng)
            assert out.next_state[0][1] == 1 and out.next_state[1][1] == 0
            assert out.cost == 0.0
            assert not out.channel_ok
            state = out.next_state

    def test_unselected_sources_keep_their_estimates(self, s1, s2, channel06):
        rng = np.random.default_rng(2)
        state = ((2, 1), (1, 0))
        for _ in range(200):
            out = step(state, 1, [s1, s2], channel06, rng)
            assert out.next_state[1][1] == 0  # source 2 untouched
            state = ((out.next_state[0][0], 1), (out.next_state[1][0], 0))

    def test_failed_delivery_keeps_estimate(self, s1):
        rng = np.random.default_rng(3)
        out = step(((0, 2),), 1, [s1], Channel(0.0), rng)
        assert out.next_state[0][1] == 2
        assert out.cost == 1.0

    def test_idle_consumes_no_channel_draw(self, s1, channel06):
        g1 = np.random.default_rng(11)
        g2 = np.random.default_rng(11)
        step(((0, 0),), 0, [s1], channel06, g1)
        g2.random()  # the single transition draw
        assert g1.random() == g2.random()

    def test_draw_order_channel_then_sources(self, s1, s2, channel06):
        g = np.random.default_rng(21)
        out = step(((0, 1), (1, 0)), 2, [s1, s2], channel06, g)
        # replay the documented order by hand on a fresh stream
        h = np.random.default_rng(21)
        ok = h.random() < 0.6
        nxt1 = min(int(np.searchsorted(np.cumsum(s1.transition[0]), h.random(), side="right")), 3)
        nxt2 = min(int(np.searchsorted(np.cumsum(s2.transition[1]), h.random(), side="right")), 1)
        assert out.channel_ok == ok
        assert out.next_state == ((nxt1, 1), (nxt2, 0 if not ok else 1))

    def test_cae_is_weighted_sum_at_next_pair(self, s1, s3, channel06):
        a = MarkovSource(transition=s1.transition, cae=s1.cae, weight=2.5)
        b = MarkovSource(transition=s3.transition, cae=s3.cae, weight=0.5)
        rng = np.random.default_rng(4)
        state = ((1, 3), (0, 1))
        for _ in range(300):
            action = int(rng.integers(0, 3))
            out = step(state, action, [a, b], channel06, rng)
            (x1, e1), (x2, e2) = out.next_state
            assert out.cae == 2.5 * a.cae[x1, e1] + 0.5 * b.cae[x2, e2]
            state = out.next_state

    def test_correct_estimate_neutralizes_the_action(self, s1, channel06):
        # from (i, i) both delivery outcomes leave the estimate at i, so the
        # next-slot CAE distribution is the same for idle and sample
        rng = np.random.default_rng(5)
        n = 100_000
        totals = [0.0, 0.0]
        for action in (0, 1):
            for _ in range(n):
                totals[action] += step(((1, 1),), action, [s1], channel06, rng).cae
        exact = kernel_cae_expectation(s1, 1, 1, False, channel06)
        assert abs(totals[0] / n - totals[1] / n) < 0.15
        assert abs(totals[0] / n - exact) < 0.15

    def test_validation_errors(self, s1, s2, channel06, rng):
        with pytest.raises(ValueError, match="sources"):
            step(((0, 0),), 0, [s1, s2], channel06, rng)
        with pytest.raises(IndexError):
            step(((4, 0),), 0, [s1], channel06, rng)
        with pytest.raises(ValueError, match="action"):
            step(((0, 0),), 2, [s1], channel06, rng)

    def test_initial_state_is_all_correct(self, s1, s2):
        assert initial_state([s1, s2]) == ((0, 0), (0, 0))


class TestSubKernel:
    def test_sampled_with_equal_pair_merges_branches(self, s1, channel06):
        # (i=1, j=1): success and failure agree, so (2,1) carries the full 0.2
        entries = dict(sub_kernel(s1, (0, 0), True, channel06))
        assert entries[(1, 0)] == pytest.approx(0.2, abs=1e-15)
        assert entries[(0, 0)] == pytest.approx(0.8, abs=1e-15)
        assert len(entries) == 2

    def test_unsampled_keeps_estimate(self, s1, s2, s3, channel06):
        for src in (s1, s2, s3):
            n = src.num_states
            for i in range(n):
                for j in range(n):
                    for (_, jj), _ in sub_kernel(src, (i, j), False, channel06):
                        assert jj == j

    def test_perfect_channel_collapses_failure_branch(self, s1):
        entries = sub_kernel(s1, (0, 2), True, Channel(1.0))
        assert entries == [((0, 0), pytest.approx(0.8)), ((1, 0), pytest.approx(0.2))]

    def test_sampled_splits_by_success_probability(self, s1, channel06):
        entries = dict(sub_kernel(s1, (0, 2), True, channel06))
        assert entries[(0, 0)] == pytest.approx(0.8 * 0.6)
        assert entries[(0, 2)] == pytest.approx(0.8 * 0.4)
        assert entries[(1, 0)] == pytest.approx(0.2 * 0.6)
        assert entries[(1, 2)] == pytest.approx(0.2 * 0.4)

    def test_normalization_and_range_across_presets(self, s1, s2, s3):
        for src in (s1, s2, s3):
            n = src.num_states
            for ps in (0.0, 0.2, 0.6, 1.0):
                ch = Channel(ps)
                for i in range(n):
                    for j in range(n):
                        for sampled in (False, True):
                            entries = sub_kernel(src, (i, j), sampled, ch)
                            total = sum(p for _, p in entries)
                            assert abs(total - 1.0) <= 1e-12
                            assert all(0.0 < p <= 1.0 for _, p in entries)

    def test_out_of_range(self, s1, channel06):
        with pytest.raises(IndexError):
            sub_kernel(s1, (4, 0), True, channel06)

    def test_monte_carlo_matches_kernel(self, s1):
        # empirical next-sub-state law from the real stepper vs the kernel
        channel = Channel(0.6)
        rng = np.random.default_rng(31)
        for (i, j), action, n in [((0, 2), 1, 1_000_000), ((1, 1), 1, 100_000), ((2, 0), 0, 100_000)]:
            counts: dict = {}
            for _ in range(n):
                out = step(((i, j),), action, [s1], channel, rng)
                counts[out.next_state[0]] = counts.get(out.next_state[0], 0) + 1
            kernel = dict(sub_kernel(s1, (i, j), action == 1, channel))
            assert set(counts) <= set(kernel)
            for sub, p in kernel.items():
                se = np.sqrt(p * (1 - p) / n)
                assert abs(counts.get(sub, 0) / n - p) <= 3 * se + 1e-12
