"""Compiled replicate loop for two arms with exact closed-form probabilities.

Mirrors :func:`batchts.engine.simulate_python` operation for operation
(same draws, same summation order), so both produce identical numbers; the
test-suite checks this. Schedules are either a precomputed endpoint list or
iPASE.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .argmaxprob import log_q_function

_SQRT2 = math.sqrt(2.0)
_log_q = numba.njit(cache=True)(log_q_function)


@numba.njit(cache=True)
def _two_arm_probs(mu0, mu1, v0, v1, out_p, out_logp):
    d = (mu0 - mu1) / math.sqrt(v0 + v1)
    if d >= 0.0:
        p1 = 0.5 * math.erfc(d / _SQRT2)
        out_p[1] = p1
        out_p[0] = 1.0 - p1
    else:
        p0 = 0.5 * math.erfc(-d / _SQRT2)
        out_p[0] = p0
        out_p[1] = 1.0 - p0
    out_logp[0] = _log_q(-d)
    out_logp[1] = _log_q(d)


@numba.njit(cache=True)
def simulate_two_arm(rewards, z, fixed_ends, use_ipase, checkpoints, trace_cap):
    horizon = rewards.shape[0]
    n_cp = checkpoints.size
    cp_n = np.zeros((n_cp, 2), np.int64)
    cp_s = np.zeros((n_cp, 2))
    cp_r = np.zeros((n_cp, 2))
    cp_b = np.zeros(n_cp, np.int64)

    tr_t = np.zeros(trace_cap, np.int64)
    tr_j = np.zeros(trace_cap, np.int64)
    tr_n = np.zeros((trace_cap, 2), np.int64)
    tr_s = np.zeros((trace_cap, 2))
    tr_mu = np.zeros((trace_cap, 2))
    tr_v = np.zeros((trace_cap, 2))
    tr_p = np.zeros((trace_cap, 2))
    tr_logp = np.zeros((trace_cap, 2))
    tr_p2 = np.zeros(trace_cap)
    tr_next = np.zeros(trace_cap, np.int64)

    ends = np.zeros(horizon if use_ipase else fixed_ends.size, np.int64)
    actions = np.zeros(horizon, np.int8)

    counts = np.zeros(2, np.int64)
    sums = np.zeros(2)
    regret = np.zeros(2)
    effort = np.zeros(2)
    mu = np.zeros(2)
    var = np.ones(2)
    p = np.zeros(2)
    logp = np.zeros(2)
    _two_arm_probs(mu[0], mu[1], var[0], var[1], p, logp)

    ci = 0
    prev = 0
    j = 1
    n_rec = 0
    last_slot = -1
    while prev < horizon:
        remaining = horizon - prev
        if use_ipase:
            if j == 1:
                size = min(2, remaining)
            else:
                p2 = min(p[0], p[1])
                if not p2 * remaining >= 1.0:
                    size = remaining
                else:
                    size = max(1, min(remaining, int(math.floor(1.0 / p2))))
            end = prev + size
        else:
            end = min(fixed_ends[j - 1], horizon)
        if last_slot >= 0:
            tr_next[last_slot] = end - prev

        sd0 = math.sqrt(var[0])
        sd1 = math.sqrt(var[1])
        b_r0 = 0.0
        b_r1 = 0.0
        b_n0 = 0
        b_n1 = 0
        for t in range(prev, end):
            th0 = mu[0] + sd0 * z[t, 0]
            th1 = mu[1] + sd1 * z[t, 1]
            if th1 > th0:
                a = 1
                b_r1 += rewards[t, 0] - rewards[t, 1]
                b_n1 += 1
            else:
                a = 0
                b_r0 += rewards[t, 0] - rewards[t, 0]
                b_n0 += 1
            actions[t] = a
            while ci < n_cp and checkpoints[ci] == t + 1:
                cp_n[ci, 0] = counts[0] + b_n0
                cp_n[ci, 1] = counts[1] + b_n1
                cp_s[ci, 0] = effort[0] + (t + 1 - prev) * p[0]
                cp_s[ci, 1] = effort[1] + (t + 1 - prev) * p[1]
                cp_r[ci, 0] = regret[0] + b_r0
                cp_r[ci, 1] = regret[1] + b_r1
                cp_b[ci] = j - 1
                ci += 1

        # close batch j: fold rewards one at a time in arrival order
        for t in range(prev, end):
            a = actions[t]
            sums[a] += rewards[t, a]
        counts[0] += b_n0
        counts[1] += b_n1
        regret[0] += b_r0
        regret[1] += b_r1
        effort[0] += (end - prev) * p[0]
        effort[1] += (end - prev) * p[1]
        if ci > 0 and checkpoints[ci - 1] == end:
            cp_b[ci - 1] = j
        ends[j - 1] = end
        for i in range(2):
            mu[i] = sums[i] / (1 + counts[i])
            var[i] = 1.0 / (1 + counts[i])
        _two_arm_probs(mu[0], mu[1], var[0], var[1], p, logp)

        slot = n_rec % trace_cap
        tr_t[slot] = end
        tr_j[slot] = j
        for i in range(2):
            tr_n[slot, i] = counts[i]
            tr_s[slot, i] = effort[i]
            tr_mu[slot, i] = mu[i]
            tr_v[slot, i] = var[i]
            tr_p[slot, i] = p[i]
            tr_logp[slot, i] = logp[i]
        tr_p2[slot] = min(p[0], p[1])
        tr_next[slot] = 0
        last_slot = slot
        n_rec += 1

        prev = end
        j += 1

    return (cp_n, cp_s, cp_r, cp_b, ends[: j - 1], n_rec,
            tr_t, tr_j, tr_n, tr_s, tr_mu, tr_v, tr_p, tr_logp, tr_p2, tr_next)
