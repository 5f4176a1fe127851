"""Single-replicate simulation of batched Thompson sampling.

Randomness is drawn up front from two streams: the coupled reward matrix
(row ``t`` holds one reward per arm for step ``t``) and the Thompson noise
matrix ``z`` with ``theta_i(t) = mu_hat_i + sqrt(sigma2_hat_i) * z[t, i]``.
The consumption of both streams is therefore independent of the schedule,
and two schedules run with the same seed face the same rewards.

Three implementations share these semantics:

* :func:`simulate_kernel`: compiled, two arms, closed-form probabilities;
* :func:`simulate_python`: vectorized per batch, any arm count, any
  probability method, adversarial hooks;
* :func:`simulate_stepwise`: step by step through :mod:`batchts.sampler`
  and :meth:`RegretLedger.step_update`; slow, used as a test oracle.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import argmaxprob as amp
from .batching import (
    FIXED_KINDS,
    IPASE,
    BatchSchedule,
    HistorySummary,
    generate_endpoints,
    next_endpoint,
)
from .env import Environment, RngStream, draw_reward_block
from .metrics import BoundaryTrace, CheckpointTable, RegretLedger
from .sampler import AgentState, close_batch, open_batch, record_observation, sample_action

__all__ = [
    "SimulationOutput",
    "draw_noise",
    "exact_probs",
    "simulate",
    "simulate_kernel",
    "simulate_python",
    "simulate_stepwise",
    "kernel_supports",
]

logger = logging.getLogger(__name__)


@dataclass
class SimulationOutput:
    table: CheckpointTable
    trace: BoundaryTrace
    endpoints: np.ndarray
    n_batches: int
    engine: str
    decision_method: Optional[str]


def draw_noise(env: Environment, master_seed: int, replicate: int, horizon: int):
    """Reward matrix and Thompson noise matrix for one replicate."""
    rewards = draw_reward_block(env, RngStream(master_seed, replicate, "rewards"), horizon)
    z = RngStream(master_seed, replicate, "thompson").standard_normal((horizon, env.n_arms))
    return rewards, z


def exact_probs(means, variances, tol: float = 1e-10, with_logs: bool = True) -> amp.ProbVector:
    """Selection probabilities used for the effort ``S_i``: closed form for two
    arms, adaptive quadrature otherwise (log path on request)."""
    profile = amp.GaussianProfile(means, variances)
    if profile.n_arms == 2:
        return amp.prob_two_arms(profile)
    pv = amp.prob_quadrature(profile, tol)
    if with_logs:
        pv.log_probs = amp.log_prob_quadrature(profile)
    return pv


def _decision_method(schedule: BatchSchedule, n_arms: int) -> Optional[str]:
    if not isinstance(schedule, IPASE):
        return None
    return amp.default_method(n_arms) if schedule.method == "auto" else schedule.method


def kernel_supports(env: Environment, schedule: BatchSchedule) -> bool:
    if env.n_arms != 2:
        return False
    if isinstance(schedule, FIXED_KINDS):
        return True
    return isinstance(schedule, IPASE) and _decision_method(schedule, 2) == "closed_form"


class _TraceBuffer:
    def __init__(self, n_arms: int) -> None:
        self.rows: list[dict] = []

    def add(self, **row) -> None:
        self.rows.append(row)

    def set_next(self, size: int) -> None:
        if self.rows:
            self.rows[-1]["next_size"] = size

    def build(self, n_arms: int) -> BoundaryTrace:
        if not self.rows:
            z = np.zeros((0, n_arms))
            return BoundaryTrace(np.zeros(0, np.int64), np.zeros(0, np.int64), z.astype(np.int64),
                                 z, z, z, z, z, np.zeros(0), np.zeros(0, np.int64))
        cols = {k: np.array([r[k] for r in self.rows]) for k in self.rows[0]}
        for k in ("t", "j", "pull_counts", "next_size"):
            cols[k] = cols[k].astype(np.int64)
        return BoundaryTrace(**cols)


def simulate_python(
    env: Environment,
    schedule: BatchSchedule,
    horizon: int,
    master_seed: int,
    replicate: int,
    checkpoints,
    trace_limit: Optional[int] = None,
    tol: float = 1e-10,
) -> SimulationOutput:
    n_arms = env.n_arms
    rewards, z = draw_noise(env, master_seed, replicate, horizon)
    mc_rng = RngStream(master_seed, replicate, "montecarlo")
    method = _decision_method(schedule, n_arms)
    ledger = RegretLedger(env.gaps, checkpoints)
    counts = np.zeros(n_arms, dtype=np.int64)
    sums = np.zeros(n_arms)
    mu = sums / (1 + counts)
    var = 1.0 / (1 + counts)
    pv = exact_probs(mu, var, tol)
    trace = _TraceBuffer(n_arms)
    ends: list[int] = []
    prev, j = 0, 1
    while prev < horizon:
        summary = None
        if not isinstance(schedule, FIXED_KINDS):
            decision = pv
            if method is not None and method != "closed_form" and j > 1:
                profile = amp.GaussianProfile(mu, var)
                if method == "quadrature":
                    decision = amp.prob_quadrature(profile, schedule.tol)
                else:
                    decision = amp.prob_monte_carlo(profile, schedule.n_samples, mc_rng)
            summary = HistorySummary(j, prev, horizon, mu.copy(), var.copy(), counts.copy(),
                                     tuple(ends), decision)
            if trace.rows:
                trace.rows[-1]["p2_decision"] = amp.second_largest(decision)
        end = next_endpoint(schedule, j, prev, horizon, summary)
        trace.set_next(end - prev)

        theta = mu + np.sqrt(var) * z[prev:end]
        actions = theta.argmax(axis=1)
        block = rewards[prev:end]
        ledger.batch_update(actions, block, pv.probs)
        # fold rewards one at a time, in arrival order
        np.add.at(sums, actions, block[np.arange(end - prev), actions])
        counts += np.bincount(actions, minlength=n_arms)
        ledger.close_batch()
        ends.append(end)

        mu = sums / (1 + counts)
        var = 1.0 / (1 + counts)
        pv = exact_probs(mu, var, tol)
        trace.add(t=end, j=j, pull_counts=counts.copy(), effort=ledger.effort.copy(),
                  means=mu.copy(), variances=var.copy(), probs=pv.probs.copy(),
                  log_probs=pv.log_probs.copy(), p2_decision=amp.second_largest(pv),
                  next_size=0)
        if trace_limit is not None and len(trace.rows) > 2 * trace_limit + 16:
            del trace.rows[: len(trace.rows) - trace_limit]
        prev = end
        j += 1
    tr = trace.build(n_arms).tail(trace_limit)
    return SimulationOutput(ledger.table(), tr, np.array(ends, np.int64), len(ends),
                            "python", method)


def simulate_kernel(
    env: Environment,
    schedule: BatchSchedule,
    horizon: int,
    master_seed: int,
    replicate: int,
    checkpoints,
    trace_limit: Optional[int] = None,
) -> SimulationOutput:
    from ._kernel import simulate_two_arm

    if not kernel_supports(env, schedule):
        raise ValueError("compiled kernel handles two arms with fixed or closed-form iPASE schedules")
    rewards, z = draw_noise(env, master_seed, replicate, horizon)
    use_ipase = isinstance(schedule, IPASE)
    fixed = (np.zeros(0, np.int64) if use_ipase
             else np.asarray(generate_endpoints(schedule, horizon), np.int64))
    cps = np.asarray(checkpoints, np.int64)
    cap = max(1, min(horizon, trace_limit if trace_limit is not None else horizon))
    (cp_n, cp_s, cp_r, cp_b, ends, n_rec,
     tr_t, tr_j, tr_n, tr_s, tr_mu, tr_v, tr_p, tr_logp, tr_p2, tr_next) = simulate_two_arm(
        rewards, z, fixed, use_ipase, cps, cap)
    table = CheckpointTable(cps.copy(), cp_n, cp_s, cp_r, cp_b, env.gaps)
    kept = min(n_rec, cap)
    order = (np.arange(n_rec - kept, n_rec) % cap)
    trace = BoundaryTrace(tr_t[order], tr_j[order], tr_n[order], tr_s[order], tr_mu[order],
                          tr_v[order], tr_p[order], tr_logp[order], tr_p2[order], tr_next[order])
    return SimulationOutput(table, trace, np.asarray(ends), int(ends.size), "kernel",
                            _decision_method(schedule, 2))


def simulate(
    env: Environment,
    schedule: BatchSchedule,
    horizon: int,
    master_seed: int,
    replicate: int,
    checkpoints,
    trace_limit: Optional[int] = None,
    engine: str = "auto",
    tol: float = 1e-10,
) -> SimulationOutput:
    """Run one replicate with the fastest engine that supports the setup."""
    if engine == "auto":
        engine = "kernel" if kernel_supports(env, schedule) else "python"
    if engine == "kernel":
        return simulate_kernel(env, schedule, horizon, master_seed, replicate, checkpoints,
                               trace_limit)
    if engine == "python":
        return simulate_python(env, schedule, horizon, master_seed, replicate, checkpoints,
                               trace_limit, tol)
    raise ValueError(f"unknown engine {engine!r}")


def simulate_stepwise(
    env: Environment,
    schedule: BatchSchedule,
    horizon: int,
    master_seed: int,
    replicate: int,
    checkpoints,
) -> tuple[RegretLedger, AgentState]:
    """Reference run through the agent API, one step at a time.

    Thompson noise comes from the same stream as the fast engines, one row of
    ``n_arms`` normals per step, so actions coincide with theirs. Rewards use
    the same up-front matrix because mixed-kind environments draw it column
    by column.
    """
    rewards = draw_reward_block(env, RngStream(master_seed, replicate, "rewards"), horizon)
    rng_ts = RngStream(master_seed, replicate, "thompson")
    ledger = RegretLedger(env.gaps, checkpoints)
    state = AgentState(env.n_arms)
    prev, j = 0, 1
    while prev < horizon:
        pv = exact_probs(state.snapshot_means(), state.snapshot_variances())
        summary = HistorySummary(j, prev, horizon, state.snapshot_means(),
                                 state.snapshot_variances(), state.pull_counts(),
                                 tuple(state.batch_endpoints[1:]), pv)
        end = next_endpoint(schedule, j, prev, horizon, summary)
        open_batch(state, end)
        while state.time < end:
            arm = sample_action(state, rng_ts)
            y = rewards[state.time - 1]
            record_observation(state, arm, y[arm])
            ledger.step_update(arm, y, pv.probs)
        close_batch(state)
        ledger.close_batch()
        prev = end
        j += 1
    return ledger, state
