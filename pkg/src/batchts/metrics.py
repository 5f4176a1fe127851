"""Regret, pull counts, measurement effort and batch counts over time.

Quantities tracked per time ``T``:

* ``R_i(T) = sum_t 1{A_t = i} (Y_1t - Y_it)`` and ``R(T) = sum_{i>=2} R_i(T)``
  (the coupled-draw random regret);
* pseudo-regret ``sum_i gap_i N_i(T)``;
* effort ``S_i(T) = sum_t P(A_t = i | H_{t-1})``; inside a batch the selection
  law is frozen, so a batch of ``k`` steps adds ``k * p_i``;
* ``B(T)``, the number of closed batches with ``T_j <= T``.

All logarithms are natural.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "LOG_BASE",
    "RegretLedger",
    "CheckpointTable",
    "BoundaryTrace",
    "AsymptoticDiagnostics",
    "checkpoint_grid",
    "compute_diagnostics",
    "regret_slope_target",
    "batch_slope_bound",
    "decay_rate_target",
]

LOG_BASE = "e"


def checkpoint_grid(horizon: int, ratio: float = 1.2) -> np.ndarray:
    """``{ceil(ratio**k)} ∩ [1, horizon]`` plus powers of ten and the horizon,
    sorted and unique."""
    if horizon < 1:
        return np.zeros(0, dtype=np.int64)
    kmax = int(math.log(horizon) / math.log(ratio)) + 2
    pts = {math.ceil(ratio ** k) for k in range(kmax + 1)}
    pts |= {10 ** k for k in range(len(str(horizon)))}
    pts = sorted(p for p in pts if 1 <= p <= horizon)
    if not pts or pts[-1] != horizon:
        pts.append(horizon)
    return np.array(pts, dtype=np.int64)


def regret_slope_target(gaps) -> float:
    """Limit of ``R(T) / log T``: ``sum over suboptimal arms of 2 / gap``."""
    g = np.asarray(gaps, dtype=float)
    g = g[g > 0]
    return float(np.sum(2.0 / g))


def batch_slope_bound(gaps) -> float:
    """iPASE bound on ``limsup B(T) / log T``: ``sum of 2 / gap**2``."""
    g = np.asarray(gaps, dtype=float)
    g = g[g > 0]
    return float(np.sum(2.0 / g ** 2))


def decay_rate_target(gap: float) -> float:
    """Limit of ``-log P(A = i | H_{T_j}) / S_i(T_j)``: ``gap**2 / 2``."""
    return 0.5 * gap * gap


@dataclass
class CheckpointTable:
    """Ledger values at checkpoint times; rows follow ``t``."""

    t: np.ndarray
    pull_counts: np.ndarray
    effort: np.ndarray
    per_arm_regret: np.ndarray
    batch_count: np.ndarray
    gaps: np.ndarray

    @property
    def random_regret(self) -> np.ndarray:
        # arm order, left to right, matching RegretLedger.random_regret
        out = np.zeros(self.t.size)
        for i in range(self.per_arm_regret.shape[1]):
            out = out + self.per_arm_regret[:, i]
        return out

    @property
    def pseudo_regret(self) -> np.ndarray:
        out = np.zeros(self.t.size)
        for i in range(self.pull_counts.shape[1]):
            out = out + self.gaps[i] * self.pull_counts[:, i]
        return out

    def to_dict(self) -> dict:
        return {
            "t": self.t.tolist(),
            "random_regret": self.random_regret.tolist(),
            "pseudo_regret": self.pseudo_regret.tolist(),
            "pull_counts": self.pull_counts.tolist(),
            "effort": self.effort.tolist(),
            "per_arm_regret": self.per_arm_regret.tolist(),
            "batch_count": self.batch_count.tolist(),
        }


@dataclass
class BoundaryTrace:
    """Per-boundary records, possibly only the last few of a run.

    Row ``k`` describes the state right after batch ``j[k]`` closed at
    ``t[k]``: posterior snapshot, exact selection probabilities for the next
    batch (and their logs), the ``P2`` used for the batch-size decision and
    the realized size of the next batch (0 after the final boundary).
    """

    t: np.ndarray
    j: np.ndarray
    pull_counts: np.ndarray
    effort: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray
    p2_decision: np.ndarray
    next_size: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    def tail(self, n: int) -> "BoundaryTrace":
        if n is None or n >= len(self):
            return self
        sl = slice(len(self) - n, None)
        return BoundaryTrace(**{k: v[sl] for k, v in self.__dict__.items()})

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryTrace":
        ints = {"t", "j", "pull_counts", "next_size"}
        return cls(**{k: np.asarray(d[k], dtype=np.int64 if k in ints else float)
                      for k in cls.__dataclass_fields__})


class RegretLedger:
    """Running regret/effort bookkeeping for one replicate.

    ``checkpoints`` are the times at which the ledger snapshots its state.
    A snapshot taken at a batch endpoint is amended by :meth:`close_batch`
    so that its batch count includes the batch ending there.
    """

    def __init__(self, gaps, checkpoints=None) -> None:
        self.gaps = np.asarray(gaps, dtype=float)
        self.n_arms = self.gaps.size
        self.time = 0
        self.batch_count = 0
        self.pull_counts = np.zeros(self.n_arms, dtype=np.int64)
        self.effort = np.zeros(self.n_arms)
        self.per_arm_regret = np.zeros(self.n_arms)
        self.checkpoints = np.asarray([] if checkpoints is None else checkpoints, dtype=np.int64)
        self._next_cp = 0
        self._rows: list[tuple] = []

    @property
    def random_regret(self) -> float:
        total = 0.0
        for r in self.per_arm_regret:
            total = total + float(r)
        return total

    @property
    def pseudo_regret(self) -> float:
        total = 0.0
        for g, n in zip(self.gaps, self.pull_counts):
            total = total + float(g) * float(n)
        return total

    def _check_probs(self, probs) -> np.ndarray:
        p = np.asarray(probs, dtype=float)
        if p.shape != (self.n_arms,):
            raise ValueError(f"expected {self.n_arms} probabilities, got shape {p.shape}")
        return p

    def _snapshot(self, t, counts, effort, regret, batches) -> None:
        self._rows.append((int(t), counts.copy(), effort.copy(), regret.copy(), int(batches)))

    def step_update(self, arm: int, rewards, probs) -> None:
        """One step: chosen ``arm``, the full coupled reward vector, and the
        frozen selection probabilities of the open batch."""
        y = np.asarray(rewards, dtype=float)
        if y.shape != (self.n_arms,):
            raise ValueError(f"expected {self.n_arms} rewards, got shape {y.shape}")
        p = self._check_probs(probs)
        self.time += 1
        self.per_arm_regret[arm] += y[0] - y[arm]
        self.pull_counts[arm] += 1
        self.effort += p
        while self._next_cp < self.checkpoints.size and self.checkpoints[self._next_cp] == self.time:
            self._snapshot(self.time, self.pull_counts, self.effort, self.per_arm_regret,
                           self.batch_count)
            self._next_cp += 1

    def batch_update(self, actions, reward_block, probs) -> None:
        """A whole batch at once; ``S_i += k * p_i``.

        ``reward_block`` has one row per step of the batch. Per-arm regret is
        accumulated as batch subtotals so that mid-batch checkpoints and the
        end-of-batch value use the same partial sums.
        """
        a = np.asarray(actions, dtype=np.int64)
        y = np.asarray(reward_block, dtype=float)
        if y.ndim != 2 or y.shape != (a.size, self.n_arms):
            raise ValueError("reward block must have shape (len(actions), n_arms)")
        p = self._check_probs(probs)
        k = a.size
        start = self.time
        diff = y[:, 0] - y[np.arange(k), a]
        onehot = np.zeros((k, self.n_arms))
        onehot[np.arange(k), a] = 1.0
        lo = self._next_cp
        hi = int(np.searchsorted(self.checkpoints, start + k, side="right"))
        if hi > lo:
            regret_cum = np.cumsum(onehot * diff[:, None], axis=0)
            count_cum = np.cumsum(onehot, axis=0).astype(np.int64)
            for c in self.checkpoints[lo:hi]:
                r = int(c) - start - 1
                self._snapshot(c, self.pull_counts + count_cum[r], self.effort + (r + 1) * p,
                               self.per_arm_regret + regret_cum[r], self.batch_count)
            self._next_cp = hi
            batch_regret = regret_cum[-1]
        else:
            batch_regret = np.bincount(a, weights=diff, minlength=self.n_arms)
        self.per_arm_regret += batch_regret
        self.pull_counts += np.bincount(a, minlength=self.n_arms)
        self.effort += k * p
        self.time += k

    def close_batch(self) -> None:
        self.batch_count += 1
        if self._rows and self._rows[-1][0] == self.time:
            t, n, s, r, _ = self._rows[-1]
            self._rows[-1] = (t, n, s, r, self.batch_count)

    def table(self) -> CheckpointTable:
        if not self._rows:
            z = np.zeros((0, self.n_arms))
            return CheckpointTable(np.zeros(0, np.int64), z.astype(np.int64), z, z,
                                   np.zeros(0, np.int64), self.gaps)
        t, n, s, r, b = zip(*self._rows)
        return CheckpointTable(np.array(t, np.int64), np.array(n, np.int64), np.array(s),
                               np.array(r), np.array(b, np.int64), self.gaps)


@dataclass
class AsymptoticDiagnostics:
    """Ratio trajectories against their theoretical limits.

    ``decay_ratio[:, k]`` belongs to suboptimal arm ``k + 1``; entries are NaN
    (and listed in ``unavailable``) where the log-probability is ``-inf`` or
    the effort is zero.
    """

    t: np.ndarray
    regret_slope: np.ndarray
    pseudo_slope: np.ndarray
    batch_slope: np.ndarray
    effort_ratio: np.ndarray
    boundary_t: np.ndarray
    decay_ratio: np.ndarray
    opt_prob: np.ndarray
    targets: dict
    unavailable: list = field(default_factory=list)
    log_base: str = LOG_BASE

    def final(self) -> dict:
        def last(a):
            return float(a[-1]) if a.size else math.nan

        out = {
            "t": int(self.t[-1]) if self.t.size else None,
            "regret_slope": last(self.regret_slope),
            "pseudo_slope": last(self.pseudo_slope),
            "batch_slope": last(self.batch_slope),
            "effort_ratio": [last(self.effort_ratio[:, i]) for i in range(self.effort_ratio.shape[1])],
            "opt_prob": last(self.opt_prob),
            "decay_ratio": [last(self.decay_ratio[:, k]) for k in range(self.decay_ratio.shape[1])],
            "targets": self.targets,
            "unavailable": self.unavailable,
            "log_base": self.log_base,
        }
        return out


def compute_diagnostics(
    table: CheckpointTable,
    gaps,
    boundaries: Optional[BoundaryTrace] = None,
) -> AsymptoticDiagnostics:
    """Ratios ``R/log t``, ``pseudo/log t``, ``B/log t`` and ``N_i/S_i`` at
    checkpoints with ``t >= 2``; ``-log P_i / S_i`` and ``P_1`` at boundaries."""
    gaps = np.asarray(gaps, dtype=float)
    keep = table.t >= 2
    t = table.t[keep]
    log_t = np.log(t.astype(float))
    with np.errstate(divide="ignore", invalid="ignore"):
        effort_ratio = table.pull_counts[keep] / table.effort[keep]
    subopt = np.flatnonzero(gaps > 0)
    targets = {
        "regret_slope": regret_slope_target(gaps),
        "batch_slope": batch_slope_bound(gaps),
        "decay_ratio": [decay_rate_target(g) for g in gaps[subopt]],
        "effort_ratio": 1.0,
    }
    unavailable = []
    if boundaries is not None and len(boundaries):
        logp = boundaries.log_probs[:, subopt]
        eff = boundaries.effort[:, subopt]
        ok = np.isfinite(logp) & (eff > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            decay = np.where(ok, -logp / eff, np.nan)
        for r, c in zip(*np.nonzero(~ok)):
            unavailable.append({"t": int(boundaries.t[r]), "arm": int(subopt[c]) + 1})
        b_t = boundaries.t
        opt_prob = boundaries.probs[:, 0]
    else:
        decay = np.zeros((0, subopt.size))
        b_t = np.zeros(0, np.int64)
        opt_prob = np.zeros(0)
    return AsymptoticDiagnostics(
        t=t,
        regret_slope=table.random_regret[keep] / log_t,
        pseudo_slope=table.pseudo_regret[keep] / log_t,
        batch_slope=table.batch_count[keep] / log_t,
        effort_ratio=effort_ratio,
        boundary_t=b_t,
        decay_ratio=decay,
        opt_prob=opt_prob,
        targets=targets,
        unavailable=unavailable,
    )
