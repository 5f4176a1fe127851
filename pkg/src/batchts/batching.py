"""Batch-size policies and a sample-path check of subexponential growth.

A schedule maps the history available at ``T_{j-1}`` to the next endpoint
``T_j``. Fixed schedules ignore the history; :class:`AdversarialHook` hands a
history summary to user code; :class:`IPASE` sets the next batch size to
``floor(1 / P2)`` where ``P2`` is the second-largest arm selection probability.
All endpoints are clipped at the horizon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .argmaxprob import ProbVector, second_largest

__all__ = [
    "PerStep",
    "Constant",
    "Polynomial",
    "Geometric",
    "ExplicitList",
    "AdversarialHook",
    "IPASE",
    "BatchSchedule",
    "HistorySummary",
    "GrowthDiagnostic",
    "ScheduleError",
    "next_endpoint",
    "ipase_first_batch",
    "ipase_batch_size",
    "generate_endpoints",
    "growth_diagnostic",
    "schedule_from_dict",
    "parse_schedule",
]


class ScheduleError(ValueError):
    """Invalid schedule parameters or a non-increasing endpoint."""


@dataclass(frozen=True)
class PerStep:
    """``T_j = j``: feedback after every pull."""

    kind = "per_step"

    def formula(self, j: int) -> int:
        return j

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class Constant:
    size: int

    kind = "constant"

    def __post_init__(self) -> None:
        if int(self.size) != self.size or self.size < 1:
            raise ScheduleError("constant batch size must be a positive integer")

    def formula(self, j: int) -> int:
        return j * int(self.size)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "size": int(self.size)}


@dataclass(frozen=True)
class Polynomial:
    """``T_j = ceil(j ** p)``; repeated values are skipped."""

    p: float

    kind = "polynomial"

    def __post_init__(self) -> None:
        if not self.p > 0:
            raise ScheduleError("polynomial exponent must be positive")

    def formula(self, j: int) -> int:
        return math.ceil(j ** self.p)

    def first_index_above(self, prev: int) -> int:
        return max(1, int(prev ** (1.0 / self.p)) - 1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p}


@dataclass(frozen=True)
class Geometric:
    """``T_j = ceil(ratio ** j)``; repeated values are skipped."""

    ratio: float

    kind = "geometric"

    def __post_init__(self) -> None:
        if not self.ratio > 1:
            raise ScheduleError("geometric ratio must exceed 1")

    def formula(self, j: int) -> int:
        return math.ceil(self.ratio ** j)

    def first_index_above(self, prev: int) -> int:
        if prev < 1:
            return 1
        return max(1, int(math.log(prev) / math.log(self.ratio)) - 1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ratio": self.ratio}


@dataclass(frozen=True)
class ExplicitList:
    """User-given endpoints; once exhausted, the last batch runs to the horizon."""

    endpoints: tuple[int, ...]

    kind = "explicit"

    def __post_init__(self) -> None:
        ends = tuple(int(e) for e in self.endpoints)
        if not ends or ends[0] < 1 or any(b <= a for a, b in zip(ends, ends[1:])):
            raise ScheduleError("explicit endpoints must be strictly increasing positive integers")
        object.__setattr__(self, "endpoints", ends)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "endpoints": list(self.endpoints)}


@dataclass(frozen=True)
class HistorySummary:
    """Everything known at ``T_{j-1}``; no rewards past that point.

    ``probs`` is the selection-probability vector of the coming batch as
    computed for the schedule's decision (it may be a Monte Carlo estimate).
    """

    j: int
    prev_end: int
    horizon: int
    means: np.ndarray
    variances: np.ndarray
    pull_counts: np.ndarray
    endpoints: tuple[int, ...]
    probs: Optional[ProbVector] = None


@dataclass(frozen=True)
class AdversarialHook:
    """Endpoint chosen by ``callback(summary) -> T_j``.

    The callback only sees a :class:`HistorySummary`; returned values at or
    below ``T_{j-1}`` are rejected.
    """

    callback: Callable[[HistorySummary], int]
    name: str = "hook"

    kind = "adversarial"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name}


@dataclass(frozen=True)
class IPASE:
    """Inverse-probability batch sizes.

    ``method`` selects how ``P2`` is computed for the decision: ``auto``,
    ``closed_form``, ``quadrature`` or ``monte_carlo``.
    """

    method: str = "auto"
    tol: float = 1e-10
    n_samples: int = 100_000

    kind = "ipase"

    def __post_init__(self) -> None:
        if self.method not in ("auto", "closed_form", "quadrature", "monte_carlo"):
            raise ScheduleError(f"unknown probability method {self.method!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "method": self.method, "tol": self.tol,
                "n_samples": self.n_samples}


BatchSchedule = Union[PerStep, Constant, Polynomial, Geometric, ExplicitList, AdversarialHook, IPASE]
FIXED_KINDS = (PerStep, Constant, Polynomial, Geometric, ExplicitList)


def ipase_first_batch(n_arms: int) -> int:
    """First iPASE batch: all priors agree, so ``P2 = 1/I`` and ``T_1 = I``."""
    if n_arms < 2:
        raise ValueError("need at least two arms")
    return int(n_arms)


def ipase_batch_size(p2: float, remaining: int) -> int:
    """``floor(1 / p2)`` clipped to ``[1, remaining]``.

    When ``p2 * remaining < 1`` the answer is ``remaining`` without forming
    ``1 / p2``, which may overflow (or divide by an underflowed zero).
    """
    if remaining < 1:
        raise ScheduleError("no steps left")
    if not p2 * remaining >= 1.0:
        return remaining
    return max(1, min(remaining, math.floor(1.0 / p2)))


def _fixed_next(schedule, prev: int) -> Optional[int]:
    if isinstance(schedule, PerStep):
        return prev + 1
    if isinstance(schedule, Constant):
        return (prev // schedule.size + 1) * schedule.size
    if isinstance(schedule, ExplicitList):
        idx = int(np.searchsorted(schedule.endpoints, prev, side="right"))
        return schedule.endpoints[idx] if idx < len(schedule.endpoints) else None
    k = schedule.first_index_above(prev)
    while schedule.formula(k) <= prev:
        k += 1
    return schedule.formula(k)


def next_endpoint(
    schedule: BatchSchedule,
    j: int,
    prev_end: int,
    horizon: int,
    summary: Optional[HistorySummary] = None,
) -> int:
    """Endpoint ``T_j`` of batch ``j`` given ``T_{j-1} = prev_end``.

    Fixed schedules return their smallest listed endpoint above ``prev_end``
    (which is the ``j``-th one unless duplicates were collapsed). The result
    always satisfies ``prev_end < T_j <= horizon``.
    """
    if prev_end >= horizon:
        raise ScheduleError(f"T_(j-1)={prev_end} already at horizon {horizon}")
    if j < 1:
        raise ScheduleError("batch index starts at 1")
    remaining = horizon - prev_end
    if isinstance(schedule, FIXED_KINDS):
        nxt = _fixed_next(schedule, prev_end)
        return horizon if nxt is None else min(nxt, horizon)
    if isinstance(schedule, IPASE):
        if summary is None or summary.probs is None:
            raise ScheduleError("iPASE needs the selection probabilities at T_(j-1)")
        if j == 1:
            return prev_end + min(ipase_first_batch(summary.probs.probs.size), remaining)
        return prev_end + ipase_batch_size(second_largest(summary.probs), remaining)
    if isinstance(schedule, AdversarialHook):
        if summary is None:
            raise ScheduleError("adversarial hook needs a history summary")
        nxt = int(schedule.callback(summary))
        if nxt <= prev_end:
            raise ScheduleError(f"hook returned T_j={nxt} <= T_(j-1)={prev_end}")
        return min(nxt, horizon)
    raise ScheduleError(f"unknown schedule {schedule!r}")


def generate_endpoints(schedule: BatchSchedule, horizon: int) -> list[int]:
    """All endpoints ``T_1 < ... < T_B = horizon`` of a history-free schedule."""
    if not isinstance(schedule, FIXED_KINDS):
        raise ScheduleError("only fixed schedules can be generated without a history")
    if horizon < 1:
        raise ScheduleError("horizon must be >= 1")
    if isinstance(schedule, PerStep):
        return list(range(1, horizon + 1))
    if isinstance(schedule, Constant):
        ends = list(range(schedule.size, horizon, schedule.size))
        return ends + [horizon]
    out = []
    prev, j = 0, 1
    while prev < horizon:
        prev = next_endpoint(schedule, j, prev, horizon)
        out.append(prev)
        j += 1
    return out


@dataclass
class GrowthDiagnostic:
    """Sample-path proxy for ``limsup_j log_{T_j}(T_{j+1} - T_j) < 1``.

    ``extrapolated_limit`` is the intercept of a least-squares fit of the
    exponents against ``1 / log T_j`` over the final half; exponents of both
    polynomial and geometric schedules approach their limits at that rate.
    """

    per_batch_exponents: list[float]
    running_sup_tail: float
    extrapolated_limit: float
    verdict: str
    threshold: float = 1.0 - 1e-3
    note: str = field(default="sample-path check; not a proof of the almost-sure condition")

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "running_sup_tail": self.running_sup_tail,
            "extrapolated_limit": self.extrapolated_limit,
            "threshold": self.threshold,
            "n_exponents": len(self.per_batch_exponents),
            "note": self.note,
        }


def growth_diagnostic(
    endpoints: Sequence[int],
    horizon: Optional[int] = None,
    threshold: float = 1.0 - 1e-3,
) -> GrowthDiagnostic:
    """Exponents ``log(T_{j+1} - T_j) / log(T_j)`` for ``T_j >= 2`` and a verdict.

    If the last endpoint equals ``horizon`` the final (clipped) interval is
    left out. Verdicts: ``Violating`` when at least half of the final-half
    exponents reach ``threshold`` or the extrapolated limit does,
    ``Subexponential`` when both the final-half maximum and the limit stay
    below it, ``Inconclusive`` otherwise or with fewer than two exponents.
    """
    ends = [int(e) for e in endpoints if int(e) > 0]
    if any(b <= a for a, b in zip(ends, ends[1:])):
        raise ScheduleError("endpoints must be strictly increasing")
    if horizon is not None and len(ends) > 1 and ends[-1] == horizon:
        ends = ends[:-1]
    xs, exps = [], []
    for a, b in zip(ends, ends[1:]):
        if a >= 2:
            xs.append(1.0 / math.log(a))
            exps.append(math.log(b - a) / math.log(a))
    if len(exps) < 2:
        return GrowthDiagnostic(exps, math.nan, math.nan, "Inconclusive", threshold)
    tail = slice(len(exps) // 2, None)
    tail_exps = np.array(exps[tail])
    tail_xs = np.array(xs[tail])
    sup_tail = float(tail_exps.max())
    if tail_exps.size >= 2 and np.ptp(tail_xs) > 0:
        slope, intercept = np.polyfit(tail_xs, tail_exps, 1)
        limit = float(intercept)
    else:
        limit = float(tail_exps[-1])
    persistent = np.mean(tail_exps >= threshold) >= 0.5
    if persistent or limit >= threshold:
        verdict = "Violating"
    elif sup_tail < threshold:
        verdict = "Subexponential"
    else:
        verdict = "Inconclusive"
    return GrowthDiagnostic(exps, sup_tail, limit, verdict, threshold)


def schedule_from_dict(d: dict) -> BatchSchedule:
    kind = d.get("kind", "").lower().replace("-", "_")
    if kind in ("per_step", "perstep", "normal"):
        return PerStep()
    if kind == "constant":
        return Constant(int(d["size"]))
    if kind == "polynomial":
        return Polynomial(float(d["p"]))
    if kind == "geometric":
        return Geometric(float(d["ratio"]))
    if kind == "explicit":
        return ExplicitList(tuple(d["endpoints"]))
    if kind == "ipase":
        return IPASE(d.get("method", "auto"), float(d.get("tol", 1e-10)),
                     int(d.get("n_samples", 100_000)))
    raise ScheduleError(f"unknown schedule kind {kind!r}")


def parse_schedule(text: str) -> BatchSchedule:
    """Parse CLI forms: ``per-step``, ``constant:10``, ``polynomial:2``,
    ``geometric:2``, ``explicit:1,4,9``, ``ipase``."""
    head, _, arg = text.strip().partition(":")
    head = head.lower().replace("-", "_")
    try:
        if head in ("per_step", "perstep", "normal"):
            return PerStep()
        if head == "constant":
            return Constant(int(arg))
        if head == "polynomial":
            return Polynomial(float(arg))
        if head == "geometric":
            return Geometric(float(arg))
        if head == "explicit":
            return ExplicitList(tuple(int(x) for x in arg.split(",")))
        if head == "ipase":
            return IPASE()
    except ValueError as exc:
        raise ScheduleError(f"bad schedule {text!r}: {exc}") from exc
    raise ScheduleError(f"unknown schedule {text!r}")
