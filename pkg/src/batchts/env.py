"""Hidden bandit environment: arm reward laws and seeded random streams.

The agent never sees an :class:`Environment` directly. The simulator draws
one reward per arm per time step (a coupled draw) so that the realized regret
``sum_t Y[best, t] - Y[A_t, t]`` is defined even for steps where the best arm
was not played.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ArmModel",
    "Environment",
    "RngStream",
    "PURPOSES",
    "draw_reward",
    "draw_all_rewards",
    "draw_reward_block",
]

#: Fixed purpose tags; the integer code is part of the stream key.
PURPOSES = {"rewards": 0, "thompson": 1, "montecarlo": 2, "sampling": 3}


@dataclass(frozen=True)
class ArmModel:
    """True reward distribution of one arm.

    ``kind`` is ``"gaussian"`` (parameters ``mean``, ``variance``) or
    ``"bernoulli"`` (parameter ``p``, stored in ``mean``).
    """

    kind: str
    mean: float
    variance: float = 0.0
    index: int = 1

    def __post_init__(self) -> None:
        if self.kind == "gaussian":
            if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
                raise ValueError("gaussian arm needs finite mean and variance")
            if self.variance < 0:
                raise ValueError(f"negative variance {self.variance}")
        elif self.kind == "bernoulli":
            if not 0.0 <= self.mean <= 1.0:
                raise ValueError(f"bernoulli p={self.mean} outside [0, 1]")
            object.__setattr__(self, "variance", self.mean * (1.0 - self.mean))
        else:
            raise ValueError(f"unknown arm kind {self.kind!r}")
        if self.index < 1:
            raise ValueError("arm index is 1-based")

    @classmethod
    def gaussian(cls, mean: float, variance: float = 1.0, index: int = 1) -> "ArmModel":
        return cls("gaussian", float(mean), float(variance), index)

    @classmethod
    def bernoulli(cls, p: float, index: int = 1) -> "ArmModel":
        return cls("bernoulli", float(p), 0.0, index)

    @property
    def p(self) -> float:
        if self.kind != "bernoulli":
            raise AttributeError("only bernoulli arms have p")
        return self.mean

    def to_dict(self) -> dict:
        if self.kind == "bernoulli":
            return {"kind": "bernoulli", "p": self.mean}
        return {"kind": "gaussian", "mean": self.mean, "variance": self.variance}

    @classmethod
    def from_dict(cls, d: dict, index: int = 1) -> "ArmModel":
        kind = d.get("kind", "gaussian").lower()
        if kind == "bernoulli":
            return cls.bernoulli(d["p"], index)
        if kind == "gaussian":
            return cls.gaussian(d["mean"], d.get("variance", 1.0), index)
        raise ValueError(f"unknown arm kind {kind!r}")

    @classmethod
    def parse(cls, text: str, index: int = 1) -> "ArmModel":
        """Parse the short forms ``bern:0.9`` and ``gauss:1.0:1.0``."""
        parts = text.strip().split(":")
        kind = parts[0].lower()
        try:
            if kind in ("bern", "bernoulli"):
                return cls.bernoulli(float(parts[1]), index)
            if kind in ("gauss", "gaussian", "normal"):
                var = float(parts[2]) if len(parts) > 2 else 1.0
                return cls.gaussian(float(parts[1]), var, index)
        except (IndexError, ValueError) as exc:
            raise ValueError(f"bad arm spec {text!r}") from exc
        raise ValueError(f"bad arm spec {text!r}")


@dataclass(frozen=True)
class Environment:
    """Ordered arms with the optimal arm moved to internal index 0.

    ``original_labels[k]`` is the 1-based position, in the user's input order,
    of the arm stored at internal position ``k``.
    """

    arms: tuple[ArmModel, ...]
    original_labels: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.arms) < 2:
            raise ValueError("need at least two arms")
        means = [a.mean for a in self.arms]
        best = max(means)
        if sum(m == best for m in means) != 1:
            raise ValueError("the optimal arm must be unique")
        if means[0] != best:
            raise ValueError("use Environment.from_arms to reorder arms")
        if not self.original_labels:
            object.__setattr__(self, "original_labels", tuple(range(1, len(self.arms) + 1)))

    @classmethod
    def from_arms(cls, arms: Sequence[ArmModel]) -> "Environment":
        arms = list(arms)
        if len(arms) < 2:
            raise ValueError("need at least two arms")
        best = max(range(len(arms)), key=lambda k: arms[k].mean)
        order = [best] + [k for k in range(len(arms)) if k != best]
        reordered = tuple(
            ArmModel(arms[k].kind, arms[k].mean, arms[k].variance, pos + 1)
            for pos, k in enumerate(order)
        )
        return cls(reordered, tuple(k + 1 for k in order))

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    @property
    def optimal_index(self) -> int:
        return 0

    @property
    def means(self) -> np.ndarray:
        return np.array([a.mean for a in self.arms])

    @property
    def gaps(self) -> np.ndarray:
        m = self.means
        return m[0] - m


@dataclass(frozen=True)
class StreamId:
    replicate: int
    purpose: str

    def key(self) -> tuple[int, int]:
        return (self.replicate, PURPOSES[self.purpose])


class RngStream:
    """Reproducible random stream keyed by ``(master_seed, replicate, purpose)``.

    Backed by numpy's PCG64 seeded through :class:`numpy.random.SeedSequence`,
    whose spawn keys give independent streams for distinct ids.
    """

    def __init__(self, master_seed: int, replicate: int = 0, purpose: str = "rewards") -> None:
        if purpose not in PURPOSES:
            raise ValueError(f"unknown stream purpose {purpose!r}")
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = StreamId(int(replicate), purpose)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.stream_id.key())
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self) -> str:
        return (
            f"RngStream(master_seed={self.master_seed}, "
            f"replicate={self.stream_id.replicate}, purpose={self.stream_id.purpose!r})"
        )

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def random(self, size=None):
        return self.generator.random(size)


def draw_reward(arm: ArmModel, rng: RngStream) -> float:
    """Draw one reward from ``arm``."""
    if arm.kind == "bernoulli":
        return 1.0 if rng.random() < arm.mean else 0.0
    return arm.mean + math.sqrt(arm.variance) * float(rng.standard_normal())


def draw_reward_block(env: Environment, rng: RngStream, n_steps: int) -> np.ndarray:
    """Rewards for ``n_steps`` consecutive steps, shape ``(n_steps, n_arms)``.

    Row ``t`` is the coupled draw for step ``t``. One uniform per cell is
    consumed for Bernoulli arms and one standard normal for Gaussian arms, so
    the stream position after a block does not depend on how it was split.
    """
    n_arms = env.n_arms
    out = np.empty((n_steps, n_arms))
    if n_steps == 0:
        return out
    kinds = {a.kind for a in env.arms}
    if kinds == {"bernoulli"}:
        u = rng.random((n_steps, n_arms))
        p = np.array([a.mean for a in env.arms])
        np.less(u, p, out=out, casting="unsafe")
        return out
    if kinds == {"gaussian"}:
        z = rng.standard_normal((n_steps, n_arms))
        mean = env.means
        sd = np.sqrt([a.variance for a in env.arms])
        np.multiply(z, sd, out=out)
        out += mean
        return out
    # mixed arm kinds: draw column by column in a fixed order
    for k, arm in enumerate(env.arms):
        if arm.kind == "bernoulli":
            out[:, k] = rng.random(n_steps) < arm.mean
        else:
            out[:, k] = arm.mean + math.sqrt(arm.variance) * rng.standard_normal(n_steps)
    return out


def draw_all_rewards(env: Environment, rng: RngStream) -> np.ndarray:
    """One independent reward per arm for a single step."""
    return draw_reward_block(env, rng, 1)[0]
