"""Dataset aggregation for branching.

Each round rolls out a mixture of the current model and strong branching,
keeps the states where the expert acted (optionally every state, labelled by
the expert), appends them to the aggregated dataset and retrains on all of it.
Every round with ``i % major_every == 0`` trains for ``epochs_major`` epochs,
the others for ``epochs_minor``.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bnb import dual_integral, run_bnb
from .branching import Mixture, ModelPolicy, StrongBranching
from .features import BipartiteState, read_samples, write_samples
from .gcnn import ArchConfig, ModelParams, TrainConfig, init_model, load_model, save_model, train
from .milp import MilpInstance, gen_set_cover

log = logging.getLogger(__name__)

LOG_FIELDS = (
    "iteration", "epochs", "new_samples", "total_samples", "decisions", "expert_decisions",
    "failed_episodes", "first_loss", "last_loss", "validation_reward",
)


@dataclass(frozen=True)
class DaggerConfig:
    n_iterations: int = 10
    p_expert: float = 0.05
    epochs_major: int = 100
    epochs_minor: int = 10
    major_every: int = 10
    instances_per_iteration: int = 10
    step_budget: int = 100
    warm_start: bool = True
    master_seed: int = 0
    label_all_states: bool = False
    per_episode_coin: bool = False
    # instance family for rollouts and validation
    n_items: int = 10
    n_sets: int = 20
    density: float = 0.3
    n_validation: int = 5
    # learner
    embed_dim: int = 64
    dropout_rate: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    jobs: int = 1

    def __post_init__(self):
        if not 0 <= self.p_expert <= 1:
            raise ValueError("p_expert must lie in [0, 1]")
        for name in ("n_iterations", "epochs_major", "epochs_minor", "major_every",
                     "instances_per_iteration", "step_budget", "jobs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def epochs_for(self, iteration: int) -> int:
        return self.epochs_major if iteration % self.major_every == 0 else self.epochs_minor

    @property
    def arch(self) -> ArchConfig:
        return ArchConfig(embed_dim=self.embed_dim, dropout_rate=self.dropout_rate)


@dataclass
class AggregatedDataset:
    samples: list[BipartiteState] = field(default_factory=list)
    slice_sizes: list[int] = field(default_factory=list)

    def extend(self, new: Sequence[BipartiteState]) -> None:
        self.samples.extend(new)
        self.slice_sizes.append(len(new))

    def slice(self, iteration: int) -> list[BipartiteState]:
        """Samples collected in round ``iteration`` (1-based)."""
        start = sum(self.slice_sizes[: iteration - 1])
        return self.samples[start:start + self.slice_sizes[iteration - 1]]

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class EpisodeResult:
    samples: list[BipartiteState]
    decisions: int
    expert_decisions: int
    reward: float | None
    failed: bool = False


@dataclass
class DaggerRun:
    config: DaggerConfig
    models: list[ModelParams]
    dataset: AggregatedDataset
    log: list[dict]


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# stream tags keep instance, episode, training and validation randomness apart
_INSTANCE, _EPISODE, _TRAIN, _VALID = 1, 2, 3, 4


def iteration_instances(config: DaggerConfig, iteration: int) -> list[MilpInstance]:
    return [
        gen_set_cover(derive_seed(config.master_seed, _INSTANCE, iteration, k),
                      config.n_items, config.n_sets, config.density)
        for k in range(config.instances_per_iteration)
    ]


def validation_instances(config: DaggerConfig) -> list[MilpInstance]:
    return [
        gen_set_cover(derive_seed(config.master_seed, _VALID, k), config.n_items, config.n_sets, config.density)
        for k in range(config.n_validation)
    ]


def run_episode(model: ModelParams, instance: MilpInstance, config: DaggerConfig, seed: int) -> EpisodeResult:
    collected: list[BipartiteState] = []
    policy = Mixture(
        ModelPolicy(model), StrongBranching(), config.p_expert,
        per_episode=config.per_episode_coin, label_all=config.label_all_states, collector=collected,
    )
    try:
        trace = run_bnb(instance, policy, config.step_budget, seed)
    except Exception as exc:  # one bad episode must not sink the round
        log.warning("episode on %s (seed %d) failed: %s", instance.name, seed, exc)
        return EpisodeResult([], policy.stats.decisions, policy.stats.expert_decisions, None, failed=True)
    return EpisodeResult(collected, policy.stats.decisions, policy.stats.expert_decisions, dual_integral(trace))


def _episode_job(args):
    return run_episode(*args)


def collect_iteration(model: ModelParams, instances: Sequence[MilpInstance], config: DaggerConfig,
                      iteration: int = 1) -> tuple[list[BipartiteState], list[EpisodeResult]]:
    """Roll out the mixture policy on every instance; samples are ordered by episode."""
    if not instances:
        raise ValueError("need at least one instance")
    jobs = [
        (model, inst, config, derive_seed(config.master_seed, _EPISODE, iteration, k))
        for k, inst in enumerate(instances)
    ]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        results = [_episode_job(j) for j in jobs]
    samples = [s for r in results for s in r.samples]
    return samples, results


def collect_expert_samples(instances: Sequence[MilpInstance], step_budget: int = 100,
                           seed: int = 0) -> list[BipartiteState]:
    """Let strong branching act alone and label every state it visits."""
    samples: list[BipartiteState] = []
    for k, inst in enumerate(instances):
        policy = Mixture(StrongBranching(), StrongBranching(), 1.0, collector=samples)
        run_bnb(inst, policy, step_budget, derive_seed(seed, _EPISODE, k))
    return samples


def validation_reward(model: ModelParams, instances: Sequence[MilpInstance], step_budget: int,
                      master_seed: int = 0) -> float:
    """Mean dual integral of the greedy model policy over a fixed instance list."""
    rewards = [
        dual_integral(run_bnb(inst, ModelPolicy(model), step_budget, derive_seed(master_seed, _VALID, 10_000 + k)))
        for k, inst in enumerate(instances)
    ]
    return float(np.mean(rewards))


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def _write_log(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in LOG_FIELDS})


def _read_log(path: Path) -> list[dict]:
    rows = []
    with path.open() as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for k in LOG_FIELDS:
                v = raw[k]
                if v == "":
                    row[k] = None
                elif k in ("first_loss", "last_loss", "validation_reward"):
                    row[k] = float(v)
                else:
                    row[k] = int(v)
            rows.append(row)
    return rows


def run_dagger(config: DaggerConfig, out_dir: str | Path | None = None, *, resume: bool = False) -> DaggerRun:
    """Run every aggregation round; with ``out_dir`` each finished round is persisted.

    Artifacts land in ``out_dir/{config.json, models/pi_<i>.model,
    dataset/d_<i>.samples, log.csv, pool.json}``. With ``resume`` the rounds
    already on disk are reloaded instead of recomputed, which reproduces the
    same run because every round is a pure function of the config.
    """
    out = Path(out_dir) if out_dir is not None else None
    done_rows: list[dict] = []
    if out is not None:
        (out / "models").mkdir(parents=True, exist_ok=True)
        (out / "dataset").mkdir(parents=True, exist_ok=True)
        cfg_path = out / "config.json"
        cfg_text = json.dumps(asdict(config), indent=1, sort_keys=True) + "\n"
        if resume and cfg_path.exists():
            if cfg_path.read_text() != cfg_text:
                raise ValueError("cannot resume: config differs from the one on disk")
            if (out / "log.csv").exists():
                done_rows = _read_log(out / "log.csv")
        cfg_path.write_text(cfg_text)

    validation = validation_instances(config)
    model = init_model(config.arch, derive_seed(config.master_seed, _TRAIN, 0))
    dataset = AggregatedDataset()
    models: list[ModelParams] = []
    rows: list[dict] = []

    for i in range(1, config.n_iterations + 1):
        if i <= len(done_rows):
            model = load_model(out / "models" / f"pi_{i}.model")
            dataset.extend(read_samples(out / "dataset" / f"d_{i}.samples"))
            models.append(model)
            rows.append(done_rows[i - 1])
            continue

        instances = iteration_instances(config, i)
        new, episodes = collect_iteration(model, instances, config, i)
        dataset.extend(new)

        epochs = config.epochs_for(i)
        start = model if config.warm_start else init_model(config.arch, derive_seed(config.master_seed, _TRAIN, i))
        losses: list[float] = []
        if len(dataset):
            tcfg = TrainConfig(learning_rate=config.learning_rate, batch_size=config.batch_size,
                               epochs=epochs, seed=derive_seed(config.master_seed, _TRAIN, 1000 + i))
            model, losses = train(start, dataset.samples, tcfg)
        else:
            log.info("round %d: aggregated dataset still empty, keeping previous model", i)
            model = start.copy()
        models.append(model)

        row = {
            "iteration": i,
            "epochs": epochs,
            "new_samples": len(new),
            "total_samples": len(dataset),
            "decisions": sum(e.decisions for e in episodes),
            "expert_decisions": sum(e.expert_decisions for e in episodes),
            "failed_episodes": sum(e.failed for e in episodes),
            "first_loss": losses[0] if losses else None,
            "last_loss": losses[-1] if losses else None,
            "validation_reward": validation_reward(model, validation, config.step_budget, config.master_seed),
        }
        rows.append(row)
        log.info("round %d: |D_i|=%d |D|=%d val=%.3f", i, len(new), len(dataset), row["validation_reward"])

        if out is not None:
            save_model(model, out / "models" / f"pi_{i}.model")
            write_samples(new, out / "dataset" / f"d_{i}.samples")
            _write_log(rows, out / "log.csv")

    if out is not None:
        pool = [{"model_path": f"models/pi_{r['iteration']}.model", "validation_reward": r["validation_reward"],
                 "iteration_tag": r["iteration"]} for r in rows]
        (out / "pool.json").write_text(json.dumps(pool, indent=1) + "\n")
    return DaggerRun(config, models, dataset, rows)
