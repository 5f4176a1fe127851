"""Replicated runs, aggregation, output files, comparisons and diagnostics."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import __version__
from ..argmaxprob import GaussianProfile, prob_quadrature, prob_two_arms, second_largest
from ..batching import FIXED_KINDS, IPASE, generate_endpoints, growth_diagnostic, ipase_batch_size
from ..engine import simulate
from ..env import PURPOSES
from ..metrics import (
    LOG_BASE,
    BoundaryTrace,
    CheckpointTable,
    checkpoint_grid,
    compute_diagnostics,
    decay_rate_target,
    regret_slope_target,
    batch_slope_bound,
)
from .config import ConfigError, ExperimentConfig

__all__ = [
    "ReplicateResult",
    "AggregateResult",
    "ComparisonReport",
    "run_replicate",
    "run_experiment",
    "aggregate",
    "emit_outputs",
    "load_result",
    "compare_runs",
    "diagnose",
    "audit_ipase",
    "CSV_HEADER",
]

logger = logging.getLogger(__name__)

CSV_HEADER = [
    "checkpoint_t",
    "mean_random_regret",
    "se_random_regret",
    "mean_pseudo_regret",
    "se_pseudo_regret",
    "mean_batches",
    "se_batches",
]


@dataclass
class ReplicateResult:
    replicate: int
    table: CheckpointTable
    trace: BoundaryTrace
    n_batches: int
    engine: str
    decision_method: Optional[str]
    growth: Optional[dict] = None

    def final(self) -> dict:
        diag = compute_diagnostics(self.table, self.table.gaps, self.trace)
        tail = diag.decay_ratio[-10:]
        out = diag.final()
        out.update(
            random_regret=float(self.table.random_regret[-1]),
            pseudo_regret=float(self.table.pseudo_regret[-1]),
            batches=int(self.table.batch_count[-1]),
            pull_counts=self.table.pull_counts[-1].tolist(),
            effort=self.table.effort[-1].tolist(),
            decay_ratio_last10=[_nanmean(tail[:, k]) for k in range(tail.shape[1])],
        )
        return out

    def to_dict(self) -> dict:
        return {
            "replicate": self.replicate,
            "streams": {p: [self.replicate, c] for p, c in PURPOSES.items()},
            "engine": self.engine,
            "decision_method": self.decision_method,
            "n_batches": self.n_batches,
            "final": self.final(),
            "growth": self.growth,
            "checkpoints": self.table.to_dict(),
            "boundaries": self.trace.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, gaps) -> "ReplicateResult":
        cp = d["checkpoints"]
        n_arms = len(gaps)

        def arr(key, dtype=float):
            a = np.asarray(cp[key], dtype=dtype)
            return a.reshape(-1, n_arms) if a.ndim == 1 and key != "t" and key != "batch_count" else a

        table = CheckpointTable(
            np.asarray(cp["t"], np.int64), arr("pull_counts", np.int64), arr("effort"),
            arr("per_arm_regret"), np.asarray(cp["batch_count"], np.int64),
            np.asarray(gaps, float))
        trace = BoundaryTrace.from_dict(_denull(d["boundaries"]))
        return cls(d["replicate"], table, trace, d["n_batches"], d["engine"],
                   d["decision_method"], d.get("growth"))


@dataclass
class AggregateResult:
    config: ExperimentConfig
    t: np.ndarray
    mean_random_regret: np.ndarray
    se_random_regret: np.ndarray
    mean_pseudo_regret: np.ndarray
    se_pseudo_regret: np.ndarray
    mean_batches: np.ndarray
    se_batches: np.ndarray
    replicates: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.config.name

    def final_batches(self) -> float:
        return float(self.mean_batches[-1])


def _nanmean(a) -> float:
    a = np.asarray(a, float)
    a = a[np.isfinite(a)]
    return float(math.fsum(a) / a.size) if a.size else math.nan


def _denull(obj):
    if isinstance(obj, dict):
        return {k: _denull(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_denull(v) for v in obj]
    return math.nan if obj is None else obj


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def run_replicate(config: ExperimentConfig, replicate: int) -> ReplicateResult:
    env = config.environment()
    schedule = config.batch_schedule()
    cps = checkpoint_grid(config.horizon, config.checkpoint_ratio)
    out = simulate(env, schedule, config.horizon, config.master_seed, replicate, cps,
                   trace_limit=config.trace_limit, engine=config.engine, tol=config.prob_tol)
    growth = None
    if not isinstance(schedule, FIXED_KINDS):
        growth = growth_diagnostic(out.endpoints, config.horizon).to_dict()
    return ReplicateResult(replicate, out.table, out.trace, out.n_batches, out.engine,
                           out.decision_method, growth)


def _run_one(args):
    config, replicate = args
    return run_replicate(config, replicate)


def _mean_se(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means via exactly rounded sums; SE is NaN for one replicate."""
    n = values.shape[0]
    mean = np.array([math.fsum(col) / n for col in values.T])
    if n < 2:
        return mean, np.full(mean.shape, math.nan)
    var = np.array([math.fsum((col - m) ** 2) / (n - 1) for col, m in zip(values.T, mean)])
    return mean, np.sqrt(var / n)


def aggregate(config: ExperimentConfig, reps: Sequence[ReplicateResult]) -> AggregateResult:
    """Fold replicate results (in replicate order) into means and standard errors."""
    reps = sorted(reps, key=lambda r: r.replicate)
    if not reps:
        raise ConfigError("nothing to aggregate")
    t = reps[0].table.t
    if any(not np.array_equal(r.table.t, t) for r in reps):
        raise ConfigError("replicates disagree on the checkpoint grid")
    cols = {}
    for key, getter in (
        ("random_regret", lambda r: r.table.random_regret),
        ("pseudo_regret", lambda r: r.table.pseudo_regret),
        ("batches", lambda r: r.table.batch_count.astype(float)),
    ):
        cols[key] = _mean_se(np.array([getter(r) for r in reps]).reshape(len(reps), t.size))
    engines = sorted({r.engine for r in reps})
    methods = sorted({str(r.decision_method) for r in reps})
    env = config.environment()
    schedule = config.batch_schedule()
    growth = None
    if isinstance(schedule, FIXED_KINDS):
        growth = growth_diagnostic(generate_endpoints(schedule, config.horizon),
                                   config.horizon).to_dict()
    meta = {
        "config": config.identity(),
        "config_hash": config.config_hash(),
        "code_version": __version__,
        "versions": _versions(),
        "log_base": LOG_BASE,
        "engine": engines[0] if len(engines) == 1 else engines,
        "prob_method_used": {
            "decision": methods[0] if len(methods) == 1 else methods,
            "effort": "closed_form" if env.n_arms == 2 else "quadrature",
        },
        "replicates": len(reps),
        "se_undefined": len(reps) < 2,
        "rng": {
            "generator": "numpy PCG64 via SeedSequence(master_seed, spawn_key=(replicate, purpose))",
            "master_seed": config.master_seed,
            "purposes": PURPOSES,
        },
        "arm_labels": list(env.original_labels),
        "gaps": env.gaps.tolist(),
        "targets": {
            "regret_slope": regret_slope_target(env.gaps),
            "batch_slope": batch_slope_bound(env.gaps),
            "decay_ratio": [decay_rate_target(g) for g in env.gaps[1:]],
        },
        "schedule_growth": growth,
    }
    return AggregateResult(config, t, cols["random_regret"][0], cols["random_regret"][1],
                           cols["pseudo_regret"][0], cols["pseudo_regret"][1],
                           cols["batches"][0], cols["batches"][1], list(reps), meta)


def _versions() -> dict:
    import numba
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None,
                   write: bool = True) -> AggregateResult:
    """Run every replicate, aggregate, and (if ``config.out`` is set) write outputs.

    Replicates are independent; with ``workers > 1`` they run in a process
    pool and are reassembled in replicate order, so results do not depend on
    the worker count.
    """
    workers = config.workers if workers is None else workers
    jobs = [(config, r) for r in range(config.replicates)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        reps = [_run_one(job) for job in jobs]
    result = aggregate(config, reps)
    if write and config.out:
        emit_outputs(result, config.out)
    return result


def _fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ""


def aggregate_csv(result: AggregateResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for k in range(result.t.size):
        w.writerow([int(result.t[k])] + [_fmt(a[k]) for a in (
            result.mean_random_regret, result.se_random_regret,
            result.mean_pseudo_regret, result.se_pseudo_regret,
            result.mean_batches, result.se_batches)])
    return buf.getvalue()


def emit_outputs(result: AggregateResult, out_dir) -> dict:
    """Write ``aggregate.csv``, ``replicates.json`` and ``metadata.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "aggregate": out / "aggregate.csv",
        "replicates": out / "replicates.json",
        "metadata": out / "metadata.json",
    }
    paths["aggregate"].write_text(aggregate_csv(result), encoding="utf-8")
    reps = [_jsonable(r.to_dict()) for r in result.replicates]
    paths["replicates"].write_text(json.dumps(reps, separators=(",", ":")) + "\n", encoding="utf-8")
    paths["metadata"].write_text(json.dumps(_jsonable(result.metadata), indent=2, sort_keys=True)
                                 + "\n", encoding="utf-8")
    return paths


def load_result(path) -> AggregateResult:
    """Read a directory written by :func:`emit_outputs`."""
    path = Path(path)
    meta = json.loads((path / "metadata.json").read_text())
    config = ExperimentConfig.from_dict(meta["config"])
    with open(path / "aggregate.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != CSV_HEADER:
        raise ConfigError(f"{path}: unexpected CSV header {rows[0]}")
    body = rows[1:]

    def col(k):
        return np.array([float(r[k]) if r[k] != "" else math.nan for r in body])

    gaps = np.asarray(meta["gaps"], float)
    reps = []
    rep_file = path / "replicates.json"
    if rep_file.exists():
        reps = [ReplicateResult.from_dict(d, gaps) for d in json.loads(rep_file.read_text())]
    return AggregateResult(config, np.array([int(r[0]) for r in body], np.int64), col(1), col(2),
                           col(3), col(4), col(5), col(6), reps, meta)


@dataclass
class ComparisonReport:
    labels: list
    t: np.ndarray
    mean_regret: np.ndarray
    regret_ratio: np.ndarray
    final_batches: list
    batch_ratio: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["checkpoint_t"] + [f"mean_random_regret[{l}]" for l in self.labels]
                   + [f"regret_ratio[{l}/{self.labels[0]}]" for l in self.labels[1:]])
        for k in range(self.t.size):
            w.writerow([int(self.t[k])] + [_fmt(x) for x in self.mean_regret[:, k]]
                       + [_fmt(x) for x in self.regret_ratio[1:, k]])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'run':<28}{'final mean regret':>20}{'mean batches':>16}{'batch ratio':>14}"]
        for k, label in enumerate(self.labels):
            lines.append(f"{label:<28}{self.mean_regret[k, -1]:>20.4f}"
                         f"{self.final_batches[k]:>16.2f}{self.batch_ratio[k]:>14.3g}")
        return "\n".join(lines)


def compare_runs(results: Sequence[AggregateResult]) -> ComparisonReport:
    """Side-by-side regret trajectories; ratios are relative to the first run."""
    if len(results) < 1:
        raise ConfigError("nothing to compare")
    base = results[0]
    for r in results[1:]:
        if r.config.horizon != base.config.horizon:
            raise ConfigError("runs differ in horizon")
        if [a.to_dict() for a in r.config.arms] != [a.to_dict() for a in base.config.arms]:
            raise ConfigError("runs differ in environment")
        if not np.array_equal(r.t, base.t):
            raise ConfigError("runs differ in checkpoint grid")
    labels = []
    for k, r in enumerate(results):
        label = r.label
        labels.append(label if label not in labels else f"{label}#{k}")
    regret = np.array([r.mean_random_regret for r in results])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = regret / regret[0]
    batches = [r.final_batches() for r in results]
    return ComparisonReport(labels, base.t.copy(), regret, ratio, batches,
                            [b / batches[0] for b in batches])


def audit_ipase(trace: BoundaryTrace, horizon: int, method: Optional[str], tol: float = 1e-10) -> list:
    """Boundaries whose next batch size does not follow ``floor(1 / P2)``.

    ``P2`` is recomputed from the logged posterior snapshot for exact
    methods; Monte Carlo decisions are checked against the logged estimate.
    """
    bad = []
    for k in range(len(trace)):
        size = int(trace.next_size[k])
        if size == 0:
            continue
        remaining = horizon - int(trace.t[k])
        if method == "monte_carlo":
            p2 = float(trace.p2_decision[k])
        else:
            profile = GaussianProfile(trace.means[k], trace.variances[k])
            pv = prob_two_arms(profile) if profile.n_arms == 2 and method != "quadrature" \
                else prob_quadrature(profile, tol)
            p2 = second_largest(pv)
        if ipase_batch_size(p2, remaining) != size:
            bad.append({"t": int(trace.t[k]), "size": size, "expected": ipase_batch_size(p2, remaining)})
    return bad


def diagnose(result: AggregateResult) -> dict:
    """Replicate-averaged final ratios next to their theoretical limits."""
    env = result.config.environment()
    gaps = env.gaps
    finals = [r.final() for r in result.replicates]
    n = len(finals)
    out = {
        "horizon": result.config.horizon,
        "replicates": n,
        "log_base": LOG_BASE,
        "regret": {
            "target": regret_slope_target(gaps),
            "mean_regret_slope": _nanmean([f["regret_slope"] for f in finals]),
            "mean_pseudo_slope": _nanmean([f["pseudo_slope"] for f in finals]),
        },
        "batches": {
            "bound": batch_slope_bound(gaps),
            "mean_batch_slope": _nanmean([f["batch_slope"] for f in finals]),
            "mean_batches": result.final_batches(),
        },
        "decay": [],
        "fraction_opt_prob_gt_0.999": _nanmean([f["opt_prob"] > 0.999 for f in finals]),
        "effort_consistency": [],
    }
    for k, g in enumerate(gaps[1:]):
        out["decay"].append({
            "arm": k + 2,
            "target": decay_rate_target(g),
            "mean_ratio_last10": _nanmean([f["decay_ratio_last10"][k] for f in finals]),
        })
        ratios = np.array([f["effort_ratio"][k + 1] for f in finals])
        out["effort_consistency"].append({
            "arm": k + 2,
            "mean_effort_ratio": _nanmean(ratios),
            "fraction_within_0.15": _nanmean(np.abs(ratios - 1.0) <= 0.15),
        })
    sched = result.config.batch_schedule()
    if isinstance(sched, IPASE):
        method = result.replicates[0].decision_method if result.replicates else None
        out["ipase_audit_violations"] = sum(
            len(audit_ipase(r.trace, result.config.horizon, method, result.config.prob_tol))
            for r in result.replicates)
    growth = result.metadata.get("schedule_growth")
    if growth is None and result.replicates and result.replicates[0].growth:
        verdicts = [r.growth["verdict"] for r in result.replicates]
        growth = {v: verdicts.count(v) for v in sorted(set(verdicts))}
    out["growth"] = growth
    return out


def format_diagnosis(d: dict) -> str:
    lines = [f"horizon T={d['horizon']}, replicates={d['replicates']}, natural log"]
    t1 = d["regret"]
    lines.append(f"regret     R(T)/log T      mean {t1['mean_regret_slope']:.4f}   target {t1['target']:.4f}")
    lines.append(f"           pseudo/log T    mean {t1['mean_pseudo_slope']:.4f}   target {t1['target']:.4f}")
    t2 = d["batches"]
    lines.append(f"batches    B(T)/log T      mean {t2['mean_batch_slope']:.4f}   bound  {t2['bound']:.4f}"
                 f"   (mean B(T) {t2['mean_batches']:.2f})")
    for p in d["decay"]:
        lines.append(f"decay      arm {p['arm']}: -log P/S  mean {p['mean_ratio_last10']:.4f}   "
                     f"target {p['target']:.4f}   (final 10 boundaries)")
    lines.append(f"optimal-arm probability P(A=1|H) > 0.999 at final boundary: "
                 f"{100 * d['fraction_opt_prob_gt_0.999']:.1f}% of replicates")
    for r in d["effort_consistency"]:
        lines.append(f"effort     arm {r['arm']}: mean N/S {r['mean_effort_ratio']:.4f}, "
                     f"|N/S-1|<=0.15 in {100 * r['fraction_within_0.15']:.1f}%")
    if "ipase_audit_violations" in d:
        lines.append(f"iPASE audit violations: {d['ipase_audit_violations']}")
    if d.get("growth"):
        lines.append(f"Growth diagnostic: {d['growth']}")
    return "\n".join(lines)
