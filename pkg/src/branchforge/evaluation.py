"""Offline and online metrics, reward tables and the degeneracy probe.

Every function here is a pure function of its inputs (models, instances,
seeds); CSV writers emit ``repr`` floats so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .bnb import dual_integral, run_bnb
from .branching import (
    EPS, ModelPolicy, MostFractional, Policy, RandomBranching, Recorder, StrongBranching,
    strong_branching_decide,
)
from .features import BipartiteState
from .gcnn import EmptyDataset, MissingLabel, ModelParams, forward
from .milp import MilpInstance

DEGENERACY_THRESHOLD = 1e-10
TOPK = (1, 3, 5)


@dataclass(frozen=True)
class MetricsRecord:
    top1: float
    top3: float
    top5: float
    mean_loss: float
    cum_reward: float | None = None
    n_samples: int = 0
    policy_name: str = "model"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.top1 <= self.top3 <= self.top5 <= 1:
            raise ValueError(f"top-k accuracies out of order: {self.top1}, {self.top3}, {self.top5}")


def label_rank(probs: np.ndarray, candidates: Sequence[int], label: int) -> int:
    """1-based rank of ``label`` among candidates sorted by probability, ties to the lower index."""
    order = sorted(candidates, key=lambda j: (-probs[j], j))
    return order.index(label) + 1


def offline_metrics(model: ModelParams, samples: Sequence[BipartiteState], *,
                    policy_name: str = "model", seed: int = 0) -> MetricsRecord:
    """Top-k agreement with the expert label and mean cross-entropy."""
    if not samples:
        raise EmptyDataset("no samples to evaluate")
    hits = {k: 0 for k in TOPK}
    loss = 0.0
    for s in samples:
        if s.expert_action is None:
            raise MissingLabel("offline metrics need expert labels")
        probs = forward(model, s)
        r = label_rank(probs, s.candidates.tolist(), s.expert_action)
        for k in TOPK:
            hits[k] += r <= k
        loss -= math.log(max(probs[s.expert_action], 1e-300))
    n = len(samples)
    return MetricsRecord(hits[1] / n, hits[3] / n, hits[5] / n, loss / n, None, n, policy_name, seed)


def uniform_baseline(samples: Sequence[BipartiteState]) -> float:
    """Expected top-1 of a uniform guess, E[1/c] over the samples' candidate counts."""
    if not samples:
        raise EmptyDataset("no samples")
    return float(np.mean([1.0 / s.candidate_mask.sum() for s in samples]))


class _Shadowed(Policy):
    """Acts with ``inner`` while asking strong branching what it would have done."""

    def __init__(self, inner: Policy, eps: float):
        self.inner = inner
        self.eps = eps
        self.agreement: list[int] = []
        self.candidate_counts: list[int] = []
        self.name = inner.name

    def reset(self, instance, rng):
        super().reset(instance, rng)
        self.inner.reset(instance, rng)

    def decide(self, node):
        d = self.inner.decide(node)
        expert = strong_branching_decide(node, self.instance, self.eps)
        self.agreement.append(int(d.var_index == expert.var_index))
        self.candidate_counts.append(len(expert.candidate_set))
        return d

    def observe(self, node, decision, down_lp, up_lp):
        self.inner.observe(node, decision, down_lp, up_lp)


@dataclass
class OnlineAccuracy:
    series: list[int]
    mean: float
    candidate_counts: list[int]

    @property
    def uniform_expectation(self) -> float:
        """E[1/c] over the candidate counts seen along this rollout."""
        if not self.candidate_counts:
            return math.nan
        return float(np.mean([1.0 / c for c in self.candidate_counts]))


def online_accuracy(model: ModelParams | Policy, instance: MilpInstance, step_budget: int = 100,
                    seed: int = 0, eps: float = EPS) -> OnlineAccuracy:
    """Per-step agreement with strong branching while the model (or any policy) acts.

    The mean is NaN when the root LP is already integral and no decision is made.
    """
    inner = model if isinstance(model, Policy) else ModelPolicy(model)
    shadow = _Shadowed(inner, eps)
    run_bnb(instance, shadow, step_budget, seed)
    series = shadow.agreement
    mean = float(np.mean(series)) if series else math.nan
    return OnlineAccuracy(series, mean, shadow.candidate_counts)


def online_accuracy_many(model: ModelParams | Policy, instances: Sequence[MilpInstance],
                         step_budget: int = 100, seed: int = 0) -> float:
    """Agreement pooled over every decision made on a list of instances."""
    series: list[int] = []
    for k, inst in enumerate(instances):
        series += online_accuracy(model, inst, step_budget, seed + k).series
    return float(np.mean(series)) if series else math.nan


@dataclass(frozen=True)
class RewardRun:
    policy: str
    instance: str
    seed: int
    reward: float | None


@dataclass
class RewardTable:
    runs: list[RewardRun]
    summary: dict[str, dict]


def aggregate_rewards(runs: Sequence[RewardRun]) -> dict[str, dict]:
    """Mean and population std per policy, in first-appearance order; missing cells are counted."""
    out: dict[str, dict] = {}
    for r in runs:
        out.setdefault(r.policy, {"values": [], "missing": 0})
        if r.reward is None:
            out[r.policy]["missing"] += 1
        else:
            out[r.policy]["values"].append(r.reward)
    summary = {}
    for name, d in out.items():
        v = np.array(d["values"], dtype=float)
        summary[name] = {
            "mean": float(v.mean()) if v.size else math.nan,
            "std": float(v.std()) if v.size else math.nan,
            "n": int(v.size),
            "missing": d["missing"],
        }
    return summary


def reward_comparison(policies: Mapping[str, Callable[[], Policy]], instances: Sequence[MilpInstance],
                      step_budget: int = 100, seeds: Sequence[int] = (0,)) -> RewardTable:
    """Dual integral for every (policy, instance, seed); a failing run becomes a missing cell.

    ``policies`` maps a column label to a zero-argument factory so that every
    run starts from a fresh policy object.
    """
    if not policies or not instances:
        raise ValueError("need at least one policy and one instance")
    runs = []
    for label, factory in policies.items():
        for k, inst in enumerate(instances):
            name = inst.name or f"instance_{k}"
            for seed in seeds:
                try:
                    reward = dual_integral(run_bnb(inst, factory(), step_budget, seed))
                except Exception:  # recorded, not raised
                    reward = None
                runs.append(RewardRun(label, name, int(seed), reward))
    return RewardTable(runs, aggregate_rewards(runs))


@dataclass
class DegeneracyReport:
    fraction_degenerate: float
    sb_calls: int
    no_sb_calls: bool
    eps: float
    threshold: float
    trajectories: dict[str, list[float]] = field(default_factory=dict)


def degeneracy_probe(instance: MilpInstance, step_budget: int = 100, *, model: ModelParams | None = None,
                     seed: int = 0, eps: float = EPS, threshold: float = DEGENERACY_THRESHOLD) -> DegeneracyReport:
    """Share of SB calls whose best product score is at most ``threshold``, plus dual-bound trajectories.

    Each trajectory starts with the root bound at step 0 followed by one
    entry per step of the budget. All policies share the same seed.
    """
    recorder = Recorder(StrongBranching(eps))
    policies: dict[str, Policy] = {"sb": recorder, "random": RandomBranching(), "mostfrac": MostFractional()}
    if model is not None:
        policies["model"] = ModelPolicy(model)
    trajectories = {}
    for name, pol in policies.items():
        trace = run_bnb(instance, pol, step_budget, seed)
        trajectories[name] = [trace.z0] + list(trace.z)
    calls = len(recorder.log)
    degenerate = sum(d.max_score <= threshold for _, d in recorder.log)
    return DegeneracyReport(degenerate / calls if calls else 0.0, calls, calls == 0, eps, threshold, trajectories)


def weakly_dominated_at(sb: Sequence[float], other: Sequence[float], start: int = 1) -> list[int]:
    """Steps t >= start where ``other``'s dual bound is at least SB's (minimization: higher is better)."""
    return [t for t in range(start, min(len(sb), len(other))) if other[t] >= sb[t]]


def accuracy_reward_table(models: Mapping[str, ModelParams], samples: Sequence[BipartiteState],
                          instances: Sequence[MilpInstance], step_budget: int = 100,
                          seeds: Sequence[int] = (0,)) -> tuple[list[MetricsRecord], float]:
    """Offline accuracy joined with mean reward per model, and their Spearman correlation.

    The correlation is NaN when either column is constant or fewer than two models are given.
    """
    factories = {name: (lambda m=m, name=name: ModelPolicy(m, name)) for name, m in models.items()}
    table = reward_comparison(factories, instances, step_budget, seeds)
    records = []
    for name, m in models.items():
        rec = offline_metrics(m, samples, policy_name=name)
        records.append(MetricsRecord(rec.top1, rec.top3, rec.top5, rec.mean_loss,
                                     table.summary[name]["mean"], rec.n_samples, name, rec.seed))
    acc = [r.top1 for r in records]
    rew = [r.cum_reward for r in records]
    if len(records) < 2 or len(set(acc)) < 2 or len(set(rew)) < 2:
        rho = math.nan
    else:
        rho = float(spearmanr(acc, rew).statistic)
    return records, rho


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path: str | Path, header: Sequence[str], rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


METRICS_FIELDS = tuple(MetricsRecord.__dataclass_fields__)


def write_metrics(records: Sequence[MetricsRecord], path: str | Path) -> None:
    _write_rows(path, METRICS_FIELDS, ([asdict(r)[k] for k in METRICS_FIELDS] for r in records))


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    out = []
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            out.append(MetricsRecord(
                float(row["top1"]), float(row["top3"]), float(row["top5"]), float(row["mean_loss"]),
                float(row["cum_reward"]) if row["cum_reward"] else None, int(row["n_samples"]),
                row["policy_name"], int(row["seed"]),
            ))
    return out


def write_trajectories(trajectories: Mapping[str, Sequence[float]], path: str | Path) -> None:
    _write_rows(path, ("policy", "step", "dual_bound"),
                ((name, t, float(z)) for name, series in trajectories.items() for t, z in enumerate(series)))


def write_online(series: Sequence[int], path: str | Path) -> None:
    _write_rows(path, ("step", "agreement"), ((t + 1, a) for t, a in enumerate(series)))


def write_reward_runs(runs: Sequence[RewardRun], path: str | Path) -> None:
    _write_rows(path, ("policy", "instance", "seed", "reward"), ((r.policy, r.instance, r.seed, r.reward) for r in runs))


def read_reward_runs(path: str | Path) -> list[RewardRun]:
    with Path(path).open() as fh:
        return [RewardRun(r["policy"], r["instance"], int(r["seed"]), float(r["reward"]) if r["reward"] else None)
                for r in csv.DictReader(fh)]


def write_reward_summary(summary: Mapping[str, dict], path: str | Path) -> None:
    _write_rows(path, ("policy", "mean", "std", "n", "missing"),
                ((p, d["mean"], d["std"], d["n"], d["missing"]) for p, d in summary.items()))
