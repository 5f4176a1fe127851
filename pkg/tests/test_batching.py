import math

import numpy as np
import pytest

from batchts.argmaxprob import GaussianProfile, ProbVector, prob_quadrature, prob_two_arms
from batchts.batching import (
    IPASE,
    AdversarialHook,
    Constant,
    ExplicitList,
    Geometric,
    HistorySummary,
    PerStep,
    Polynomial,
    ScheduleError,
    generate_endpoints,
    growth_diagnostic,
    ipase_batch_size,
    ipase_first_batch,
    next_endpoint,
    parse_schedule,
    schedule_from_dict,
)


def summary(probs, j=2, prev=10, horizon=1000):
    probs = np.asarray(probs, float)
    n = probs.size
    return HistorySummary(j, prev, horizon, np.zeros(n), np.ones(n), np.zeros(n, int), (),
                          ProbVector(probs, "closed_form"))


class TestFixedSchedules:
    def test_per_step(self):
        assert next_endpoint(PerStep(), 5, 4, 100) == 5

    def test_polynomial(self):
        assert next_endpoint(Polynomial(2), 4, 9, 100) == 16
        assert generate_endpoints(Polynomial(2), 50) == [1, 4, 9, 16, 25, 36, 49, 50]

    def test_polynomial_collapses_duplicates(self):
        ends = generate_endpoints(Polynomial(0.5), 20)
        assert ends == list(range(1, 21))

    def test_geometric(self):
        assert generate_endpoints(Geometric(2), 40) == [2, 4, 8, 16, 32, 40]
        assert generate_endpoints(Geometric(1.5), 6) == [2, 3, 4, 6]

    def test_constant_and_explicit(self):
        assert generate_endpoints(Constant(3), 10) == [3, 6, 9, 10]
        assert generate_endpoints(ExplicitList((2, 5)), 9) == [2, 5, 9]

    def test_clipped_at_horizon(self):
        assert next_endpoint(Polynomial(3), 3, 8, 20) == 20

    def test_errors(self):
        with pytest.raises(ScheduleError):
            next_endpoint(PerStep(), 5, 100, 100)
        with pytest.raises(ScheduleError):
            Polynomial(0)
        with pytest.raises(ScheduleError):
            Geometric(1.0)
        with pytest.raises(ScheduleError):
            ExplicitList((3, 3))
        with pytest.raises(ScheduleError):
            generate_endpoints(IPASE(), 10)

    @pytest.mark.parametrize("sched", [PerStep(), Constant(7), Polynomial(1.3), Polynomial(0.4),
                                       Geometric(1.05), ExplicitList((1, 2, 50))])
    def test_strictly_increasing_and_cover_horizon(self, sched):
        ends = generate_endpoints(sched, 997)
        assert all(b > a for a, b in zip(ends, ends[1:]))
        assert ends[0] >= 1 and ends[-1] == 997

    def test_parse(self):
        assert parse_schedule("polynomial:2") == Polynomial(2.0)
        assert parse_schedule("per-step") == PerStep()
        assert parse_schedule("explicit:1,4,9") == ExplicitList((1, 4, 9))
        assert schedule_from_dict(Geometric(2).to_dict()) == Geometric(2.0)
        with pytest.raises(ScheduleError):
            parse_schedule("fibonacci")


class TestIPASE:
    def test_fresh_two_arm(self):
        assert next_endpoint(IPASE(), 2, 10, 1000, summary([0.5, 0.5])) == 12

    @pytest.mark.parametrize("n_arms", [2, 3, 5, 7])
    def test_first_batch(self, n_arms):
        assert ipase_first_batch(n_arms) == n_arms
        pv = prob_quadrature(GaussianProfile(np.zeros(n_arms), np.ones(n_arms)))
        np.testing.assert_allclose(pv.probs, 1 / n_arms, atol=1e-10)
        s = HistorySummary(1, 0, 1000, np.zeros(n_arms), np.ones(n_arms), np.zeros(n_arms, int),
                           (), pv)
        assert next_endpoint(IPASE(), 1, 0, 1000, s) == n_arms

    def test_floor_rule(self):
        assert next_endpoint(IPASE(), 3, 10, 1000, summary([0.7, 0.2, 0.1])) == 15
        assert next_endpoint(IPASE(), 3, 10, 1000, summary([0.97, 0.03])) == 10 + 33

    def test_underflow_guard(self):
        assert next_endpoint(IPASE(), 3, 10, 1000, summary([1.0, 0.0])) == 1000
        assert ipase_batch_size(1e-300, 50) == 50
        assert ipase_batch_size(0.02, 40) == 40

    def test_size_monotone_in_inverse_p2(self):
        sizes = [ipase_batch_size(p, 10 ** 6) for p in np.geomspace(0.5, 1e-9, 60)]
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))
        assert sizes[-1] == 10 ** 6

    def test_needs_probs(self):
        with pytest.raises(ScheduleError):
            next_endpoint(IPASE(), 2, 0, 10)


class TestAdversarialHook:
    def test_hook_sees_summary(self):
        seen = []

        def cb(s):
            seen.append(s)
            return s.prev_end + 1 + int(s.pull_counts.sum() % 3)

        hook = AdversarialHook(cb)
        s = summary([0.5, 0.5], prev=4)
        assert next_endpoint(hook, 2, 4, 100, s) == 5
        assert seen[0] is s

    def test_rejects_non_increasing(self):
        hook = AdversarialHook(lambda s: s.prev_end)
        with pytest.raises(ScheduleError):
            next_endpoint(hook, 2, 4, 100, summary([0.5, 0.5], prev=4))

    def test_clipped(self):
        hook = AdversarialHook(lambda s: 10 ** 9)
        assert next_endpoint(hook, 2, 4, 100, summary([0.5, 0.5], prev=4)) == 100


class TestGrowthDiagnostic:
    def test_polynomial_oracle(self):
        # exponents log(j^2 - (j-1)^2) / log((j-1)^2) tend to 1/2
        # T_j = j^2 for j = 2..998; the interval ending at the horizon is dropped
        j = np.arange(2, 999)
        exact = np.log((j + 1) ** 2 - j ** 2) / np.log(j ** 2)
        diag = growth_diagnostic(generate_endpoints(Polynomial(2), 10 ** 6), 10 ** 6)
        np.testing.assert_allclose(diag.per_batch_exponents, exact, rtol=1e-12)
        assert diag.verdict == "Subexponential"
        assert diag.extrapolated_limit == pytest.approx(0.5, abs=0.01)

    def test_geometric_violates(self):
        diag = growth_diagnostic(generate_endpoints(Geometric(2), 10 ** 6), 10 ** 6)
        assert diag.verdict == "Violating"
        assert np.allclose(diag.per_batch_exponents, 1.0)

    def test_slow_geometric_still_violates(self):
        # exponents approach 1 from below like 1 + log(1 - 1/r) / log T_j
        diag = growth_diagnostic(generate_endpoints(Geometric(1.5), 10 ** 6), 10 ** 6)
        assert diag.running_sup_tail < 0.999
        assert diag.verdict == "Violating"

    def test_per_step(self):
        diag = growth_diagnostic(generate_endpoints(PerStep(), 5000), 5000)
        assert diag.verdict == "Subexponential"
        assert max(diag.per_batch_exponents) == 0.0

    def test_too_short(self):
        assert growth_diagnostic([1, 2]).verdict == "Inconclusive"

    def test_rejects_non_increasing(self):
        with pytest.raises(ScheduleError):
            growth_diagnostic([1, 5, 5, 9])
