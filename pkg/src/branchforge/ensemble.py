"""Weight-space model averaging.

``kida_average`` averages models produced by successive dataset-aggregation
rounds; ``epoch_weight_average`` applies the same arithmetic to checkpoints
of a single training run. Only parameters are averaged, never optimizer state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .gcnn import ArchMismatch, ModelParams, load_model

DEFAULT_TOP_K = 3


class EmptyPool(ValueError):
    pass


class PoolTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class PoolEntry:
    model: ModelParams
    validation_reward: float
    iteration_tag: int
    path: str | None = None


def _pairwise_sum(stack: np.ndarray) -> np.ndarray:
    while stack.shape[0] > 1:
        if stack.shape[0] % 2:
            stack = np.concatenate([stack[:-2], (stack[-2] + stack[-1])[None]])
        else:
            stack = stack[0::2] + stack[1::2]
    return stack[0]


def _mean(arrays: Sequence[np.ndarray]) -> np.ndarray:
    # sorting per element makes the result independent of input order; offsetting by
    # the smallest value makes identical inputs average back to themselves bit for bit
    stack = np.sort(np.stack(arrays), axis=0)
    base = stack[0]
    return base + _pairwise_sum(stack - base) / len(arrays)


def kida_average(models: Sequence[ModelParams]) -> ModelParams:
    """Elementwise mean of every named tensor across models."""
    if not models:
        raise EmptyPool("need at least one model to average")
    arch = models[0].arch
    names = set(models[0].tensors)
    for k, m in enumerate(models[1:], start=1):
        if m.arch != arch:
            raise ArchMismatch(f"model {k} has architecture {m.arch}, expected {arch}")
        if set(m.tensors) != names:
            raise ArchMismatch(f"model {k} has tensors {sorted(m.tensors)}, expected {sorted(names)}")
    tensors = {name: _mean([m.tensors[name] for m in models]) for name in models[0].tensors}
    return ModelParams(tensors, arch, init_seed=0)


def epoch_weight_average(checkpoints: Sequence[ModelParams]) -> ModelParams:
    """Average checkpoints taken at different epochs of one training run."""
    return kida_average(checkpoints)


def select_top_k(pool: Sequence[PoolEntry], k: int = DEFAULT_TOP_K) -> list[ModelParams]:
    """The k entries with the highest validation reward; ties go to the earlier iteration."""
    return [e.model for e in top_k_entries(pool, k)]


def top_k_entries(pool: Sequence[PoolEntry], k: int = DEFAULT_TOP_K) -> list[PoolEntry]:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(pool) < k:
        raise PoolTooSmall(f"pool has {len(pool)} models, cannot select {k}")
    return sorted(pool, key=lambda e: (-e.validation_reward, e.iteration_tag))[:k]


def write_manifest(entries: Sequence[tuple[str, float, int]], path: str | Path) -> None:
    rows = [{"model_path": str(p), "validation_reward": r, "iteration_tag": t} for p, r, t in entries]
    Path(path).write_text(json.dumps(rows, indent=1) + "\n")


def read_manifest(path: str | Path) -> list[PoolEntry]:
    """Load a pool manifest; relative model paths resolve against the manifest's directory."""
    path = Path(path)
    rows = json.loads(path.read_text())
    pool = []
    for row in rows:
        mp = Path(row["model_path"])
        if not mp.is_absolute():
            mp = path.parent / mp
        pool.append(PoolEntry(load_model(mp), float(row["validation_reward"]), int(row["iteration_tag"]), str(mp)))
    return pool
