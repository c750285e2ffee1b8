"""Bipartite graph convolutional policy in plain numpy with hand-written gradients.

Pipeline: initial embeddings of variables and constraints, one
variable-to-constraint half convolution, one constraint-to-variable half
convolution, then a linear scorer and a softmax restricted to the branching
candidates. Messages are summed over incident edges.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .features import N_CON_FEATURES, N_EDGE_FEATURES, N_VAR_FEATURES, BipartiteState

PARAM_NAMES = (
    "W_v", "b_v", "W_c", "b_c",
    "U_c", "M_c", "W_e_c", "b_cc",
    "U_v", "M_v", "W_e_v", "b_vv",
    "w_o", "b_o",
)
_MAGIC = "branchforge-model"


class ShapeMismatch(ValueError):
    pass


class MissingLabel(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class ChecksumMismatch(ValueError):
    pass


class ArchMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    embed_dim: int = 64
    var_in: int = N_VAR_FEATURES
    con_in: int = N_CON_FEATURES
    edge_in: int = N_EDGE_FEATURES
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h = self.embed_dim
        return {
            "W_v": (self.var_in, h), "b_v": (h,),
            "W_c": (self.con_in, h), "b_c": (h,),
            "U_c": (h, h), "M_c": (h, h), "W_e_c": (self.edge_in, h), "b_cc": (h,),
            "U_v": (h, h), "M_v": (h, h), "W_e_v": (self.edge_in, h), "b_vv": (h,),
            "w_o": (h,), "b_o": (),
        }


@dataclass
class ModelParams:
    tensors: dict[str, np.ndarray]
    arch: ArchConfig = field(default_factory=ArchConfig)
    init_seed: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.arch, self.init_seed)

    def check(self) -> None:
        expected = self.arch.shapes()
        if set(self.tensors) != set(expected):
            raise ShapeMismatch(f"tensor names {sorted(self.tensors)} != {sorted(expected)}")
        for k, shape in expected.items():
            if self.tensors[k].shape != shape:
                raise ShapeMismatch(f"{k}: shape {self.tensors[k].shape}, expected {shape}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.eps <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate, eps and batch_size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def init_model(arch: ArchConfig = ArchConfig(), seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in arch.shapes().items():
        if name.startswith("b"):
            tensors[name] = np.zeros(shape)
            continue
        if len(shape) == 2:
            fan_in, fan_out = shape
        else:
            fan_in, fan_out = shape[0], 1
        a = math.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-a, a, size=shape)
    return ModelParams(tensors, arch, seed)


def _relu(x):
    return np.maximum(x, 0.0)


def _forward(model: ModelParams, s: BipartiteState, drop_mask: np.ndarray | None):
    p = model.tensors
    if s.var_features.shape[1] != model.arch.var_in or s.con_features.shape[1] != model.arch.con_in:
        raise ShapeMismatch(
            f"state has {s.var_features.shape[1]} var / {s.con_features.shape[1]} con features, "
            f"model expects {model.arch.var_in} / {model.arch.con_in}"
        )
    n = s.n
    inc, esum_c, esum_v = s.incidence

    pre_v1 = s.var_features @ p["W_v"] + p["b_v"]
    v1 = _relu(pre_v1)
    pre_c1 = s.con_features @ p["W_c"] + p["b_c"]
    c1 = _relu(pre_c1)

    # sums over incident edges: constraint i gathers from its variables and vice versa
    agg_v1 = inc @ v1
    pre_c2 = c1 @ p["U_c"] + agg_v1 @ p["M_c"] + esum_c @ p["W_e_c"] + p["b_cc"]
    c2 = _relu(pre_c2)
    agg_c2 = inc.T @ c2
    pre_v2 = v1 @ p["U_v"] + agg_c2 @ p["M_v"] + esum_v @ p["W_e_v"] + p["b_vv"]
    v2 = _relu(pre_v2)
    v2d = v2 * drop_mask if drop_mask is not None else v2

    logits = v2d @ p["w_o"] + p["b_o"]
    mask = s.candidate_mask
    probs = np.zeros(n)
    if mask.any():
        z = logits[mask]
        z = z - z.max()
        e = np.exp(z)
        probs[mask] = e / e.sum()
    cache = dict(pre_v1=pre_v1, v1=v1, pre_c1=pre_c1, c1=c1, agg_v1=agg_v1, esum_c=esum_c,
                 pre_c2=pre_c2, c2=c2, agg_c2=agg_c2, esum_v=esum_v, pre_v2=pre_v2, v2d=v2d)
    return probs, logits, cache


def _dropout_mask(arch: ArchConfig, n: int, rng: np.random.Generator | None) -> np.ndarray | None:
    if arch.dropout_rate <= 0 or rng is None:
        return None
    keep = 1.0 - arch.dropout_rate
    return (rng.random((n, arch.embed_dim)) < keep) / keep


def forward(model: ModelParams, state: BipartiteState, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Probabilities over variables; exactly zero outside the candidate mask."""
    drop = _dropout_mask(model.arch, state.n, rng) if train_mode else None
    return _forward(model, state, drop)[0]


def _backward(model: ModelParams, s: BipartiteState, probs, cache, drop_mask, label: int, scale: float, grads):
    p = model.tensors
    dz = probs.copy()
    dz[label] -= 1.0
    dz *= scale
    inc = s.incidence[0]

    grads["w_o"] += cache["v2d"].T @ dz
    grads["b_o"] += dz.sum()
    dv2 = np.outer(dz, p["w_o"])
    if drop_mask is not None:
        dv2 = dv2 * drop_mask
    g_v2 = dv2 * (cache["pre_v2"] > 0)

    grads["U_v"] += cache["v1"].T @ g_v2
    grads["M_v"] += cache["agg_c2"].T @ g_v2
    grads["W_e_v"] += cache["esum_v"].T @ g_v2
    grads["b_vv"] += g_v2.sum(axis=0)
    dv1 = g_v2 @ p["U_v"].T
    d_agg_c2 = g_v2 @ p["M_v"].T
    dc2 = inc @ d_agg_c2

    g_c2 = dc2 * (cache["pre_c2"] > 0)
    grads["U_c"] += cache["c1"].T @ g_c2
    grads["M_c"] += cache["agg_v1"].T @ g_c2
    grads["W_e_c"] += cache["esum_c"].T @ g_c2
    grads["b_cc"] += g_c2.sum(axis=0)
    dc1 = g_c2 @ p["U_c"].T
    d_agg_v1 = g_c2 @ p["M_c"].T
    dv1 += inc.T @ d_agg_v1

    g_c1 = dc1 * (cache["pre_c1"] > 0)
    grads["W_c"] += s.con_features.T @ g_c1
    grads["b_c"] += g_c1.sum(axis=0)
    g_v1 = dv1 * (cache["pre_v1"] > 0)
    grads["W_v"] += s.var_features.T @ g_v1
    grads["b_v"] += g_v1.sum(axis=0)


def loss_and_grad(model: ModelParams, batch: Sequence[BipartiteState],
                  rng: np.random.Generator | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy against the expert labels and its exact gradient.

    Dropout masks are drawn from ``rng`` per sample when the architecture
    enables dropout; pass ``rng=None`` to evaluate without dropout.
    """
    if not batch:
        raise EmptyDataset("empty batch")
    grads = {k: np.zeros_like(v) for k, v in model.tensors.items()}
    total = 0.0
    scale = 1.0 / len(batch)
    for s in batch:
        if s.expert_action is None:
            raise MissingLabel("sample has no expert action")
        drop = _dropout_mask(model.arch, s.n, rng)
        probs, _, cache = _forward(model, s, drop)
        total += -math.log(max(probs[s.expert_action], 1e-300))
        _backward(model, s, probs, cache, drop, s.expert_action, scale, grads)
    return total * scale, grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, model: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(t) for k, t in model.tensors.items()},
                   {k: np.zeros_like(t) for k, t in model.tensors.items()})


def adam_step(model: ModelParams, grads: dict[str, np.ndarray], opt_state: AdamState | None,
              config: TrainConfig) -> tuple[ModelParams, AdamState]:
    if opt_state is None:
        opt_state = AdamState.zeros_like(model)
    if set(grads) != set(model.tensors):
        raise ShapeMismatch("gradient names do not match the model")
    step = opt_state.step + 1
    b1, b2 = config.beta1, config.beta2
    new_t, new_m, new_v = {}, {}, {}
    for k, w in model.tensors.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ShapeMismatch(f"{k}: gradient shape {g.shape} != {w.shape}")
        m = b1 * opt_state.m[k] + (1 - b1) * g
        v = b2 * opt_state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        new_t[k] = w - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[k], new_v[k] = m, v
    return ModelParams(new_t, model.arch, model.init_seed), AdamState(new_m, new_v, step)


def train(model: ModelParams, dataset: Sequence[BipartiteState], config: TrainConfig,
          on_epoch: Callable[[int, ModelParams], None] | None = None) -> tuple[ModelParams, list[float]]:
    """Minibatch Adam over shuffled passes; returns the model and per-epoch mean loss.

    ``on_epoch(epoch, model)`` is called after every epoch (1-based), which is
    how checkpoints for epoch weight averaging are captured.
    """
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    shuffle_rng, drop_rng = rng.spawn(2)
    use_dropout = model.arch.dropout_rate > 0
    opt = AdamState.zeros_like(model)
    losses = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(dataset))
        weighted = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            loss, grads = loss_and_grad(model, batch, drop_rng if use_dropout else None)
            weighted += loss * len(batch)
            model, opt = adam_step(model, grads, opt, config)
        losses.append(weighted / len(dataset))
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model, losses


def save_model(model: ModelParams, path: str | Path) -> None:
    """JSON header line followed by a little-endian float64 payload."""
    model.check()
    names = list(PARAM_NAMES)
    payload = b"".join(np.ascontiguousarray(model.tensors[k], dtype="<f8").tobytes() for k in names)
    header = {
        "format": _MAGIC,
        "version": 1,
        "arch": asdict(model.arch),
        "init_seed": model.init_seed,
        "names": names,
        "shapes": [list(model.tensors[k].shape) for k in names],
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    Path(path).write_bytes(json.dumps(header, sort_keys=True).encode() + b"\n" + payload)


def load_model(path: str | Path, expect_arch: ArchConfig | None = None) -> ModelParams:
    raw = Path(path).read_bytes()
    head, sep, payload = raw.partition(b"\n")
    if not sep:
        raise ChecksumMismatch("missing header terminator")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise ChecksumMismatch(f"unreadable header: {exc}") from exc
    if header.get("format") != _MAGIC:
        raise ChecksumMismatch("not a model file")
    sizes = [int(np.prod(s, dtype=np.int64)) * 8 for s in header["shapes"]]
    if len(payload) != header["payload_bytes"] or sum(sizes) != header["payload_bytes"]:
        raise ChecksumMismatch(
            f"payload is {len(payload)} bytes, header declares {header['payload_bytes']} "
            f"and shapes imply {sum(sizes)}"
        )
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumMismatch("payload digest mismatch")
    arch = ArchConfig(**header["arch"])
    if expect_arch is not None and arch != expect_arch:
        raise ArchMismatch(f"file architecture {arch} != expected {expect_arch}")
    tensors, off = {}, 0
    for name, shape, size in zip(header["names"], header["shapes"], sizes):
        tensors[name] = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=off).astype(float).reshape(shape)
        off += size
    model = ModelParams(tensors, arch, header["init_seed"])
    model.check()
    return model
