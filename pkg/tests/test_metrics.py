import math

import numpy as np
import pytest

from batchts.engine import simulate
from batchts.batching import Polynomial, PerStep
from batchts.env import ArmModel, Environment
from batchts.metrics import (
    BoundaryTrace,
    RegretLedger,
    checkpoint_grid,
    compute_diagnostics,
    decay_rate_target,
    regret_slope_target,
    batch_slope_bound,
)


class TestStepUpdate:
    def test_always_optimal(self):
        led = RegretLedger([0.0, 0.5], [5, 10])
        rng = np.random.default_rng(0)
        for _ in range(10):
            led.step_update(0, rng.random(2), [0.9, 0.1])
        assert led.random_regret == 0.0 and led.pseudo_regret == 0.0
        assert led.pull_counts.tolist() == [10, 0]

    def test_deterministic_rewards(self):
        led = RegretLedger([0.0, 1.0])
        for _ in range(10):
            led.step_update(1, [1.0, 0.0], [0.5, 0.5])
        assert led.random_regret == 10.0
        assert led.per_arm_regret.tolist() == [0.0, 10.0]
        assert led.pseudo_regret == 10.0

    def test_uniform_effort(self):
        led = RegretLedger([0.0, 1.0])
        for t in range(100):
            led.step_update(t % 2, [1.0, 0.0], [0.5, 0.5])
        assert led.effort.tolist() == [50.0, 50.0]

    def test_dimension_mismatch(self):
        led = RegretLedger([0.0, 1.0])
        with pytest.raises(ValueError):
            led.step_update(0, [1.0, 0.0, 2.0], [0.5, 0.5])
        with pytest.raises(ValueError):
            led.step_update(0, [1.0, 0.0], [1.0])
        with pytest.raises(ValueError):
            led.batch_update([0, 1], np.zeros((3, 2)), [0.5, 0.5])

    def test_batch_count_at_boundary_checkpoint(self):
        led = RegretLedger([0.0, 1.0], [2, 3])
        led.step_update(0, [1.0, 0.0], [0.5, 0.5])
        led.step_update(1, [1.0, 0.0], [0.5, 0.5])
        led.close_batch()
        led.step_update(1, [1.0, 0.0], [0.5, 0.5])
        table = led.table()
        assert table.batch_count.tolist() == [1, 1]

    def test_batch_update_matches_eq5(self):
        led = RegretLedger([0.0, 0.3], [3, 7])
        led.batch_update([0, 1, 1, 0, 0, 1, 0], np.tile([1.0, 0.0], (7, 1)), [0.25, 0.75])
        led.close_batch()
        assert led.effort.tolist() == [7 * 0.25, 7 * 0.75]
        t = led.table()
        assert t.effort[0].tolist() == [0.75, 2.25]
        assert t.pull_counts.tolist() == [[1, 2], [4, 3]]
        assert t.batch_count.tolist() == [0, 1]


class TestConservation:
    @pytest.mark.parametrize("sched", [PerStep(), Polynomial(2)])
    def test_counts_and_effort(self, sched):
        env = Environment.from_arms([ArmModel.gaussian(1.0), ArmModel.gaussian(0.4),
                                     ArmModel.gaussian(0.2)])
        T = 600 if isinstance(sched, PerStep) else 20_000
        out = simulate(env, sched, T, 3, 0, checkpoint_grid(T))
        tab = out.table
        assert np.array_equal(tab.pull_counts.sum(axis=1), tab.t)
        np.testing.assert_allclose(tab.effort.sum(axis=1), tab.t, rtol=0, atol=1e-9 * max(1, T / 1e6))
        assert np.array_equal(tab.random_regret, tab.per_arm_regret.sum(axis=1))

    def test_decomposition_exact(self):
        env = Environment.from_arms([ArmModel.gaussian(1.0), ArmModel.gaussian(0.0)])
        out = simulate(env, Polynomial(2), 10_000, 5, 0, checkpoint_grid(10_000))
        r = out.table
        # R(T) = sum over arms of R_i(T), same draws, same additions
        assert np.array_equal(r.random_regret, r.per_arm_regret[:, 0] + r.per_arm_regret[:, 1])
        assert np.all(r.per_arm_regret[:, 0] == 0.0)

    def test_effort_drift_long_run(self):
        env = Environment.from_arms([ArmModel.gaussian(1.0), ArmModel.gaussian(0.0)])
        T = 10 ** 6
        out = simulate(env, Polynomial(2), T, 5, 0, checkpoint_grid(T))
        assert abs(out.table.effort[-1].sum() - T) <= 1e-9 * T


class TestMartingaleConsistency:
    def test_mean_n_minus_s(self):
        env = Environment.from_arms([ArmModel.bernoulli(0.6), ArmModel.bernoulli(0.4)])
        T = 3000
        cps = checkpoint_grid(T)
        diffs = []
        for r in range(200):
            out = simulate(env, Polynomial(1.5), T, 77, r, cps)
            diffs.append(out.table.pull_counts[-1] - out.table.effort[-1])
        diffs = np.array(diffs)
        se = diffs.std(axis=0, ddof=1) / math.sqrt(len(diffs))
        assert np.all(np.abs(diffs.mean(axis=0)) <= 4 * se)

    def test_frequency_convergence(self):
        env = Environment.from_arms([ArmModel.gaussian(1.0), ArmModel.gaussian(0.0)])
        T = 10 ** 6
        cps = np.array([T])
        good = [simulate(env, Polynomial(2), T, 31, r, cps).table.pull_counts[-1, 0] / T >= 0.99
                for r in range(20)]
        assert np.mean(good) >= 0.95


class TestDiagnostics:
    def test_targets(self):
        assert regret_slope_target([0.0, 1.0]) == 2.0
        assert regret_slope_target([0.0, 0.8]) == pytest.approx(2.5)
        assert batch_slope_bound([0.0, 0.8]) == pytest.approx(3.125)
        assert decay_rate_target(1.0) == 0.5

    def test_ratios(self):
        env = Environment.from_arms([ArmModel.gaussian(1.0), ArmModel.gaussian(0.0)])
        out = simulate(env, Polynomial(2), 5000, 1, 0, checkpoint_grid(5000), trace_limit=50)
        d = compute_diagnostics(out.table, env.gaps, out.trace)
        tab = out.table
        k = tab.t >= 2
        np.testing.assert_allclose(d.regret_slope, tab.random_regret[k] / np.log(tab.t[k]))
        np.testing.assert_allclose(d.batch_slope, tab.batch_count[k] / np.log(tab.t[k]))
        ratio = -out.trace.log_probs[:, 1] / out.trace.effort[:, 1]
        np.testing.assert_allclose(d.decay_ratio[:, 0], ratio)
        assert d.opt_prob.size == len(out.trace)
        assert d.log_base == "e"

    def test_unavailable_is_flagged(self):
        env = Environment.from_arms([ArmModel.gaussian(1.0), ArmModel.gaussian(0.0)])
        out = simulate(env, Polynomial(2), 200, 1, 0, checkpoint_grid(200), trace_limit=5)
        tr = out.trace
        tr.log_probs[:, 1] = -np.inf
        d = compute_diagnostics(out.table, env.gaps, tr)
        assert np.all(np.isnan(d.decay_ratio))
        assert len(d.unavailable) == len(tr)
        assert not np.any(np.isinf(d.decay_ratio))

    def test_checkpoint_grid(self):
        g = checkpoint_grid(1000)
        assert g[0] == 1 and g[-1] == 1000
        assert {10, 100, 1000} <= set(g.tolist())
        assert np.all(np.diff(g) > 0)
        assert checkpoint_grid(0).size == 0
