"""Thompson sampling with Gaussian pseudo-posteriors under batched feedback.

Every arm keeps the pseudo-posterior ``N(mu_hat, 1 / (1 + N))`` with
``mu_hat = reward_sum / (1 + N)``, i.e. a standard normal prior on the mean and
unit-variance Gaussian noise, whatever the true reward law. Within a batch the
agent samples from a frozen copy of the posteriors taken at the previous batch
endpoint; rewards are buffered and folded in when the batch closes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .argmaxprob import GaussianProfile
from .env import RngStream

__all__ = [
    "ArmPosterior",
    "AgentState",
    "BatchError",
    "sample_action",
    "record_observation",
    "open_batch",
    "close_batch",
]


class BatchError(RuntimeError):
    """A batch operation was called at the wrong time."""


@dataclass
class ArmPosterior:
    pull_count: int = 0
    reward_sum: float = 0.0

    @property
    def mu_hat(self) -> float:
        return self.reward_sum / (1 + self.pull_count)

    @property
    def sigma2_hat(self) -> float:
        return 1.0 / (1 + self.pull_count)

    def fold(self, reward: float) -> None:
        self.pull_count += 1
        self.reward_sum += reward


def _copy(posteriors: list[ArmPosterior]) -> list[ArmPosterior]:
    return [ArmPosterior(p.pull_count, p.reward_sum) for p in posteriors]


@dataclass
class AgentState:
    """Mutable state of one Thompson-sampling agent.

    ``live_pull_counts`` tracks pulls made inside the open batch; the
    posteriors themselves only change in :func:`close_batch`.
    """

    n_arms: int
    posteriors: list[ArmPosterior] = field(default_factory=list)
    frozen_snapshot: list[ArmPosterior] = field(default_factory=list)
    pending_observations: list[tuple[int, float]] = field(default_factory=list)
    live_pull_counts: list[int] = field(default_factory=list)
    time: int = 0
    batch_index: int = 1
    batch_endpoints: list[int] = field(default_factory=lambda: [0])
    batch_end: int | None = None
    last_action: int | None = None

    def __post_init__(self) -> None:
        if self.n_arms < 2:
            raise ValueError("need at least two arms")
        if not self.posteriors:
            self.posteriors = [ArmPosterior() for _ in range(self.n_arms)]
        if not self.frozen_snapshot:
            self.frozen_snapshot = _copy(self.posteriors)
        if not self.live_pull_counts:
            self.live_pull_counts = [p.pull_count for p in self.posteriors]

    @property
    def batch_open(self) -> bool:
        return self.batch_end is not None

    def snapshot_means(self) -> np.ndarray:
        return np.array([p.mu_hat for p in self.frozen_snapshot])

    def snapshot_variances(self) -> np.ndarray:
        return np.array([p.sigma2_hat for p in self.frozen_snapshot])

    def profile(self) -> GaussianProfile:
        """Sampling law of ``theta`` for the open (or next) batch."""
        return GaussianProfile(self.snapshot_means(), self.snapshot_variances())

    def pull_counts(self) -> np.ndarray:
        return np.array([p.pull_count for p in self.posteriors])


def open_batch(state: AgentState, end: int) -> None:
    """Start batch ``j`` covering steps ``time + 1 .. end``."""
    if state.batch_open:
        raise BatchError("a batch is already open")
    if end <= state.time:
        raise BatchError(f"batch end {end} must exceed current time {state.time}")
    state.batch_end = int(end)


def sample_action(state: AgentState, rng: RngStream) -> int:
    """Draw ``theta_i ~ N(mu_hat_i, sigma2_hat_i)`` from the frozen snapshot and
    return the (0-based) argmax, lowest index on ties."""
    if not state.batch_open:
        raise BatchError("no open batch")
    if state.time >= state.batch_end:
        raise BatchError("batch is full; close it first")
    z = rng.standard_normal(state.n_arms)
    theta = state.snapshot_means() + np.sqrt(state.snapshot_variances()) * z
    action = int(np.argmax(theta))
    state.time += 1
    state.last_action = action
    return action


def record_observation(state: AgentState, arm: int, reward: float) -> None:
    """Buffer the reward of the arm just played; posteriors are untouched."""
    if not 0 <= arm < state.n_arms:
        raise IndexError(f"arm {arm} out of range for {state.n_arms} arms")
    if not state.batch_open:
        raise BatchError("no open batch")
    state.pending_observations.append((arm, float(reward)))
    state.live_pull_counts[arm] += 1


def close_batch(state: AgentState) -> None:
    """Fold buffered rewards into the posteriors and refreeze the snapshot.

    Observations are folded one at a time in arrival order, so a batch of
    ``k`` observations gives bit-identical posteriors to ``k`` batches of one.
    """
    if not state.batch_open:
        raise BatchError("no open batch")
    if state.time != state.batch_end:
        raise BatchError(f"cannot close batch at t={state.time}; it ends at {state.batch_end}")
    for arm, reward in state.pending_observations:
        state.posteriors[arm].fold(reward)
    state.pending_observations.clear()
    state.frozen_snapshot = _copy(state.posteriors)
    state.live_pull_counts = [p.pull_count for p in state.posteriors]
    state.batch_endpoints.append(state.time)
    state.batch_index += 1
    state.batch_end = None
