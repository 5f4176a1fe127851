"""Experiment configuration: a JSON document plus command-line overrides.

Example::

    {
      "name": "fig1-ipase",
      "arms": [{"kind": "bernoulli", "p": 0.9}, {"kind": "bernoulli", "p": 0.1}],
      "schedule": {"kind": "ipase"},
      "horizon": 100000,
      "replicates": 400,
      "master_seed": 2024,
      "prob_method": "closed_form",
      "checkpoint_ratio": 1.2,
      "trace_limit": 100,
      "out": "runs/fig1-ipase"
    }

``prob_method`` (``auto``, ``closed_form``, ``quadrature[:tol]``,
``monte_carlo[:n]``) is the route iPASE uses for its batch-size decision.
The effort ``S_i`` is always accumulated from exact probabilities.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from ..batching import IPASE, BatchSchedule, parse_schedule, schedule_from_dict
from ..env import ArmModel, Environment

__all__ = ["ConfigError", "ExperimentConfig", "parse_prob_method", "load_config"]

_METHOD_ALIASES = {
    "auto": "auto",
    "closed_form": "closed_form",
    "closed-form": "closed_form",
    "closed": "closed_form",
    "quadrature": "quadrature",
    "quad": "quadrature",
    "monte_carlo": "monte_carlo",
    "monte-carlo": "monte_carlo",
    "mc": "monte_carlo",
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def parse_prob_method(text: str) -> tuple[str, Optional[float]]:
    """``"monte-carlo:100000"`` -> ``("monte_carlo", 100000)``."""
    head, _, arg = str(text).strip().partition(":")
    method = _METHOD_ALIASES.get(head.lower())
    if method is None:
        raise ConfigError(f"unknown probability method {text!r}")
    if not arg:
        return method, None
    try:
        return method, float(arg)
    except ValueError as exc:
        raise ConfigError(f"bad probability method parameter in {text!r}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    arms: tuple[ArmModel, ...]
    schedule: dict
    horizon: int
    replicates: int = 1
    master_seed: int = 0
    prob_method: str = "auto"
    prob_tol: float = 1e-10
    mc_samples: int = 100_000
    checkpoint_ratio: float = 1.2
    trace_limit: int = 100
    name: str = "experiment"
    engine: str = "auto"
    out: Optional[str] = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.prob_method not in ("auto", "closed_form", "quadrature", "monte_carlo"):
            raise ConfigError(f"unknown probability method {self.prob_method!r}")
        if self.prob_method == "closed_form" and len(self.arms) != 2:
            raise ConfigError("closed-form probabilities need exactly two arms")
        if self.engine not in ("auto", "kernel", "python"):
            raise ConfigError(f"unknown engine {self.engine!r}")
        if not self.checkpoint_ratio > 1:
            raise ConfigError("checkpoint_ratio must exceed 1")
        if self.trace_limit < 1:
            raise ConfigError("trace_limit must be >= 1")
        if str(self.schedule.get("kind", "")).lower() == "ipase":
            # the decision route lives in prob_method/prob_tol/mc_samples
            object.__setattr__(self, "schedule", {"kind": "ipase"})
        try:
            self.environment()
            self.batch_schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def environment(self) -> Environment:
        return Environment.from_arms(self.arms)

    def batch_schedule(self) -> BatchSchedule:
        sched = schedule_from_dict(self.schedule)
        if isinstance(sched, IPASE):
            sched = IPASE(self.prob_method, self.prob_tol, self.mc_samples)
        return sched

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "arms": [a.to_dict() for a in self.arms],
            "schedule": dict(self.schedule),
            "horizon": self.horizon,
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "prob_method": self.prob_method,
            "prob_tol": self.prob_tol,
            "mc_samples": self.mc_samples,
            "checkpoint_ratio": self.checkpoint_ratio,
            "trace_limit": self.trace_limit,
            "engine": self.engine,
            "out": self.out,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "arms" not in d or "schedule" not in d or "horizon" not in d:
            raise ConfigError("config needs 'arms', 'schedule' and 'horizon'")
        try:
            arms = tuple(ArmModel.from_dict(a, k + 1) for k, a in enumerate(d["arms"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad arm declaration: {exc}") from exc
        kw = {k: v for k, v in d.items() if k != "arms"}
        kw["arms"] = arms
        if isinstance(kw["schedule"], str):
            kw["schedule"] = parse_schedule(kw["schedule"]).to_dict()
        sched = kw["schedule"]
        if str(sched.get("kind", "")).lower() == "ipase":
            for src, dst in (("method", "prob_method"), ("tol", "prob_tol"), ("n_samples", "mc_samples")):
                if src in sched and dst not in kw:
                    kw[dst] = sched[src]
        if "prob_method" in kw:
            method, param = parse_prob_method(kw["prob_method"])
            kw["prob_method"] = method
            if param is not None:
                if method == "monte_carlo":
                    kw["mc_samples"] = int(param)
                elif method == "quadrature":
                    kw["prob_tol"] = float(param)
        for key in ("horizon", "replicates", "master_seed", "mc_samples", "trace_limit", "workers"):
            if key in kw:
                kw[key] = int(kw[key])
        return cls(**kw)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Apply CLI-style overrides; ``None`` values are ignored."""
        d = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "arms" and isinstance(value, str):
                value = [ArmModel.parse(s, k + 1).to_dict() for k, s in enumerate(value.split(","))]
            if key == "schedule" and isinstance(value, str):
                value = parse_schedule(value).to_dict()
            d[key] = value
        return ExperimentConfig.from_dict(d)

    def identity(self) -> dict:
        """The fields that determine results (no paths, no worker count)."""
        d = self.to_dict()
        for key in ("out", "workers", "engine"):
            d.pop(key)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if "config" in data and "arms" not in data:
        # a metadata record written by emit_outputs
        data = data["config"]
    return ExperimentConfig.from_dict(data)
