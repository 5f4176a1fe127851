import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batchts.argmaxprob import GaussianProfile, prob_two_arms
from batchts.env import RngStream
from batchts.sampler import (
    AgentState,
    ArmPosterior,
    BatchError,
    close_batch,
    open_batch,
    record_observation,
    sample_action,
)


def state_with_snapshot(means, counts):
    """Agent whose frozen snapshot has the given posterior means and pull counts."""
    posts = [ArmPosterior(n, m * (1 + n)) for m, n in zip(means, counts)]
    return AgentState(len(means), posteriors=posts)


def frequencies(state, n, seed):
    rng = RngStream(seed, 0, "thompson")
    counts = np.zeros(state.n_arms)
    open_batch(state, state.time + n)
    for _ in range(n):
        counts[sample_action(state, rng)] += 1
    return counts / n


class TestArmPosterior:
    def test_fresh(self):
        p = ArmPosterior()
        assert p.mu_hat == 0.0 and p.sigma2_hat == 1.0

    def test_invariants(self):
        p = ArmPosterior()
        for y in (0.3, -1.0, 2.5):
            p.fold(y)
        assert p.sigma2_hat * (1 + p.pull_count) == 1.0
        assert p.mu_hat == p.reward_sum / (1 + p.pull_count)


class TestSampleAction:
    def test_symmetric_two(self):
        f = frequencies(AgentState(2), 100_000, 1)
        assert abs(f[0] - 0.5) <= 3 * math.sqrt(0.25 / 1e5)

    def test_dominant_arm(self):
        # P(arm 2) = Q(10 * sqrt(101 / 2)), far below 1e-300
        assert prob_two_arms(GaussianProfile([10, 0], [1 / 101, 1 / 101])).probs[1] < 1e-300
        f = frequencies(state_with_snapshot([10.0, 0.0], [100, 100]), 100_000, 2)
        assert f[0] >= 1 - 1e-6

    def test_three_exchangeable(self):
        f = frequencies(AgentState(3), 100_000, 3)
        assert np.all(np.abs(f - 1 / 3) <= 3 * math.sqrt((2 / 9) / 1e5))

    def test_needs_open_batch(self):
        with pytest.raises(BatchError):
            sample_action(AgentState(2), RngStream(1))

    def test_cannot_overrun_batch(self):
        s = AgentState(2)
        open_batch(s, 1)
        rng = RngStream(1)
        sample_action(s, rng)
        with pytest.raises(BatchError):
            sample_action(s, rng)


class TestRecordObservation:
    def test_does_not_touch_snapshot(self):
        s = AgentState(2)
        open_batch(s, 10)
        rng = RngStream(4, 0, "thompson")
        arm = sample_action(s, rng)
        before = s.profile()
        record_observation(s, arm, 100.0)
        after = s.profile()
        assert np.array_equal(before.means, after.means)
        assert np.array_equal(before.variances, after.variances)
        assert s.posteriors[arm].pull_count == 0
        assert s.live_pull_counts[arm] == 1

    def test_sampling_law_frozen_within_batch(self):
        # two in-batch segments, large rewards recorded in between
        s = AgentState(2)
        rng = RngStream(5, 0, "thompson")
        n = 50_000
        open_batch(s, 2 * n)
        first = np.zeros(2)
        for _ in range(n):
            a = sample_action(s, rng)
            first[a] += 1
            record_observation(s, a, 50.0 if a == 1 else -50.0)
        second = np.zeros(2)
        for _ in range(n):
            second[sample_action(s, rng)] += 1
        se = math.sqrt(2 * 0.25 / n)
        assert abs(first[0] / n - second[0] / n) <= 4 * se

    def test_out_of_range(self):
        s = AgentState(2)
        open_batch(s, 1)
        with pytest.raises(IndexError):
            record_observation(s, 2, 1.0)

    def test_single_observation_update(self):
        s = AgentState(2)
        open_batch(s, 1)
        sample_action(s, RngStream(6))
        record_observation(s, 1, 1.0)
        close_batch(s)
        assert s.posteriors[1].mu_hat == 0.5
        assert s.posteriors[1].sigma2_hat == 0.5


class TestCloseBatch:
    def run_batch(self, state, observations, seed=0):
        open_batch(state, state.time + len(observations))
        rng = RngStream(seed)
        for arm, y in observations:
            sample_action(state, rng)
            record_observation(state, arm, y)
        close_batch(state)

    def test_fresh_arm(self):
        s = AgentState(2)
        self.run_batch(s, [(0, 2.0)])
        assert s.posteriors[0].mu_hat == 1.0 and s.posteriors[0].sigma2_hat == 0.5

    def test_update_formula(self):
        s = AgentState(2)
        self.run_batch(s, [(0, 2.0)])
        self.run_batch(s, [(0, 2.0), (0, 2.0)])
        assert s.posteriors[0].mu_hat == (2 * 1.0 + 4.0) / 4 == 1.5
        assert s.posteriors[0].sigma2_hat == 0.25

    def test_unpulled_arm_unchanged(self):
        s = AgentState(3)
        self.run_batch(s, [(1, 0.4)])
        before = (s.posteriors[2].mu_hat, s.posteriors[2].sigma2_hat)
        self.run_batch(s, [(0, 1.0), (1, -1.0)])
        assert (s.posteriors[2].mu_hat, s.posteriors[2].sigma2_hat) == before

    def test_mid_batch_close_rejected(self):
        s = AgentState(2)
        open_batch(s, 3)
        sample_action(s, RngStream(1))
        with pytest.raises(BatchError):
            close_batch(s)

    def test_refreezes_and_advances(self):
        s = AgentState(2)
        self.run_batch(s, [(1, 3.0), (1, 1.0)])
        assert s.batch_index == 2
        assert s.batch_endpoints == [0, 2]
        assert s.pending_observations == []
        assert s.snapshot_means().tolist() == [0.0, 4.0 / 3.0]

    def test_per_step_snapshot_equals_live(self):
        # T_j = j: the frozen snapshot is always the live posterior when sampling
        s = AgentState(2)
        rng = RngStream(7, 0, "thompson")
        y = np.random.default_rng(0).normal(size=200)
        for t in range(200):
            open_batch(s, t + 1)
            assert [p.mu_hat for p in s.frozen_snapshot] == [p.mu_hat for p in s.posteriors]
            a = sample_action(s, rng)
            record_observation(s, a, y[t])
            close_batch(s)


@settings(max_examples=50, deadline=None)
@given(
    obs=st.lists(st.tuples(st.integers(0, 2), st.floats(-10, 10, allow_nan=False)),
                 min_size=1, max_size=30),
    cuts=st.lists(st.integers(1, 29), max_size=6),
)
def test_batch_fold_equals_stepwise(obs, cuts):
    batched, stepwise = AgentState(3), AgentState(3)
    bounds = sorted({c for c in cuts if c < len(obs)} | {len(obs)})
    start = 0
    for end in bounds:
        TestCloseBatch().run_batch(batched, obs[start:end])
        start = end
    for o in obs:
        TestCloseBatch().run_batch(stepwise, [o])
    for a, b in zip(batched.posteriors, stepwise.posteriors):
        assert a.mu_hat == b.mu_hat and a.sigma2_hat == b.sigma2_hat
        assert a.sigma2_hat * (1 + a.pull_count) == 1.0
