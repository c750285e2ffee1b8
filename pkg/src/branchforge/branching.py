"""Branching rules: strong branching, pseudo-costs, simple baselines, the learned
policy, and the expert/model mixture used for data collection.

Every policy follows the same small protocol used by ``run_bnb``::

    reset(instance, rng)                  once per episode
    decide(node) -> BranchDecision        once per branching step
    observe(node, decision, down, up)     after the chosen children are solved
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .bnb import BnbNode, PolicyError, child_bounds
from .features import BipartiteState, extract_state
from .gcnn import ModelParams, forward
from .lp import LpSolution, LpStatus, fractional_indices, solve_lp
from .milp import MilpInstance

EPS = 1e-6
INFEASIBLE_GAIN = 1e10


class NoFractionalCandidates(ValueError):
    pass


@dataclass(frozen=True)
class BranchDecision:
    var_index: int
    scores: tuple[float, ...]
    candidate_set: tuple[int, ...]
    expert_used: bool = False
    down_gains: tuple[float, ...] | None = None
    up_gains: tuple[float, ...] | None = None

    @property
    def max_score(self) -> float:
        return max(self.scores) if self.scores else 0.0


def candidates(lp: LpSolution, instance: MilpInstance) -> list[int]:
    cand = fractional_indices(instance, lp.x)
    if not cand:
        raise NoFractionalCandidates("LP solution is integral")
    return cand


def product_score(down_gain: float, up_gain: float, eps: float = EPS) -> float:
    return max(down_gain, eps) * max(up_gain, eps)


TIE_RTOL = 1e-9


def _argmax_decision(cands: list[int], scores, **extra) -> BranchDecision:
    # scores within TIE_RTOL of the best count as ties so LP round-off cannot reorder them
    scores = tuple(float(s) for s in scores)
    top = max(scores)
    best = min(k for k in range(len(cands)) if scores[k] >= top - TIE_RTOL * abs(top))
    return BranchDecision(cands[best], scores, tuple(cands), **extra)


def strong_branching_decide(node: BnbNode, instance: MilpInstance, eps: float = EPS) -> BranchDecision:
    """Solve both children of every candidate and take the best product score."""
    cands = candidates(node.lp, instance)
    downs, ups = [], []
    for j in cands:
        down_ov, up_ov = child_bounds(node, instance, j)
        gains = []
        for ov in (down_ov, up_ov):
            lp = solve_lp(instance, ov)
            if lp.status is LpStatus.ITERATION_LIMIT:
                raise PolicyError(f"child LP of variable {j} hit the iteration limit")
            gains.append(INFEASIBLE_GAIN if lp.status is LpStatus.INFEASIBLE else lp.objective - node.lp.objective)
        downs.append(gains[0])
        ups.append(gains[1])
    scores = [product_score(d, u, eps) for d, u in zip(downs, ups)]
    return _argmax_decision(cands, scores, down_gains=tuple(downs), up_gains=tuple(ups))


@dataclass
class PseudocostState:
    up_sum: np.ndarray
    down_sum: np.ndarray
    up_count: np.ndarray
    down_count: np.ndarray

    @classmethod
    def fresh(cls, n_vars: int) -> "PseudocostState":
        return cls(np.zeros(n_vars), np.zeros(n_vars), np.zeros(n_vars, dtype=int), np.zeros(n_vars, dtype=int))

    def unit_costs(self, direction: str) -> np.ndarray:
        sums, counts = (self.down_sum, self.down_count) if direction == "down" else (self.up_sum, self.up_count)
        seen = counts > 0
        psi = np.ones_like(sums)
        if seen.any():
            per_var = sums[seen] / counts[seen]
            psi[:] = per_var.mean()
            psi[seen] = per_var
        return psi


def pseudocost_update(state: PseudocostState, j: int, direction: str, gain: float, fractionality: float) -> None:
    """Record one observed per-unit gain; ``fractionality`` is the distance moved."""
    if fractionality <= 0:
        return
    unit = max(gain, 0.0) / fractionality
    if direction == "down":
        state.down_sum[j] += unit
        state.down_count[j] += 1
    elif direction == "up":
        state.up_sum[j] += unit
        state.up_count[j] += 1
    else:
        raise ValueError(f"direction must be 'down' or 'up', not {direction!r}")


def pseudocost_decide(node: BnbNode, state: PseudocostState, instance: MilpInstance, eps: float = EPS) -> BranchDecision:
    cands = candidates(node.lp, instance)
    psi_down = state.unit_costs("down")
    psi_up = state.unit_costs("up")
    scores = []
    for j in cands:
        f = node.lp.x[j] - math.floor(node.lp.x[j])
        scores.append(product_score(psi_down[j] * f, psi_up[j] * (1 - f), eps))
    return _argmax_decision(cands, scores)


def baseline_decide(kind: str, node: BnbNode, rng: np.random.Generator, instance: MilpInstance) -> BranchDecision:
    cands = candidates(node.lp, instance)
    if kind == "random":
        pick = int(rng.integers(len(cands)))
        scores = [1.0 if k == pick else 0.0 for k in range(len(cands))]
        return BranchDecision(cands[pick], tuple(scores), tuple(cands))
    if kind == "mostfrac":
        x = node.lp.x
        scores = [min(x[j] - math.floor(x[j]), math.ceil(x[j]) - x[j]) for j in cands]
        return _argmax_decision(cands, scores)
    raise ValueError(f"unknown baseline kind {kind!r}")


def model_decide(model: ModelParams, node: BnbNode, instance: MilpInstance) -> BranchDecision:
    state = extract_state(instance, node)
    probs = forward(model, state, train_mode=False)
    cands = [int(j) for j in state.candidates]
    if not cands:
        raise NoFractionalCandidates("LP solution is integral")
    return _argmax_decision(cands, probs[cands])


class Policy:
    name = "policy"

    def reset(self, instance: MilpInstance, rng: np.random.Generator) -> None:
        self.instance = instance
        self.rng = rng

    def decide(self, node: BnbNode) -> BranchDecision:
        raise NotImplementedError

    def observe(self, node, decision, down_lp, up_lp) -> None:
        pass


class StrongBranching(Policy):
    name = "sb"

    def __init__(self, eps: float = EPS):
        self.eps = eps

    def decide(self, node):
        return strong_branching_decide(node, self.instance, self.eps)


class Pseudocost(Policy):
    name = "pseudocost"

    def __init__(self, eps: float = EPS):
        self.eps = eps
        self.state: PseudocostState | None = None

    def reset(self, instance, rng):
        super().reset(instance, rng)
        self.state = PseudocostState.fresh(instance.n_vars)

    def decide(self, node):
        return pseudocost_decide(node, self.state, self.instance, self.eps)

    def observe(self, node, decision, down_lp, up_lp):
        j = decision.var_index
        xj = node.lp.x[j]
        f = xj - math.floor(xj)
        # infeasible children carry no per-unit information
        if down_lp.optimal:
            pseudocost_update(self.state, j, "down", down_lp.objective - node.lp.objective, f)
        if up_lp.optimal:
            pseudocost_update(self.state, j, "up", up_lp.objective - node.lp.objective, 1 - f)


class RandomBranching(Policy):
    name = "random"

    def decide(self, node):
        return baseline_decide("random", node, self.rng, self.instance)


class MostFractional(Policy):
    name = "mostfrac"

    def decide(self, node):
        return baseline_decide("mostfrac", node, self.rng, self.instance)


class ModelPolicy(Policy):
    """Greedy argmax of the GCNN over the branching candidates."""

    def __init__(self, model: ModelParams, name: str = "model"):
        self.model = model
        self.name = name

    def decide(self, node):
        return model_decide(self.model, node, self.instance)


def mixture_decide(model_policy: Policy, expert_policy: Policy, p_expert: float, node: BnbNode,
                   rng: np.random.Generator) -> BranchDecision:
    """Let the expert act with probability ``p_expert``, otherwise the model."""
    if not 0 <= p_expert <= 1:
        raise ValueError("p_expert must lie in [0, 1]")
    use_expert = rng.random() < p_expert
    acting = expert_policy if use_expert else model_policy
    return replace(acting.decide(node), expert_used=use_expert)


@dataclass
class MixtureStats:
    decisions: int = 0
    expert_decisions: int = 0


class Mixture(Policy):
    """Expert/model mixture that records expert-labelled states.

    With ``per_episode`` the coin is flipped once per episode instead of at
    every decision. With ``label_all`` every visited state is labelled by the
    expert, whichever policy acts.
    """

    def __init__(self, model_policy: Policy, expert_policy: Policy | None = None, p_expert: float = 0.05,
                 *, per_episode: bool = False, label_all: bool = False,
                 collector: list[BipartiteState] | None = None, name: str | None = None):
        if not 0 <= p_expert <= 1:
            raise ValueError("p_expert must lie in [0, 1]")
        self.model_policy = model_policy
        self.expert_policy = expert_policy or StrongBranching()
        self.p_expert = p_expert
        self.per_episode = per_episode
        self.label_all = label_all
        self.collector = collector
        self.stats = MixtureStats()
        self.name = name or f"mixture({getattr(model_policy, 'name', 'model')},{p_expert})"
        self._episode_expert = False

    def reset(self, instance, rng):
        super().reset(instance, rng)
        self.model_policy.reset(instance, rng)
        self.expert_policy.reset(instance, rng)
        if self.per_episode:
            self._episode_expert = rng.random() < self.p_expert

    def decide(self, node):
        if self.per_episode:
            acting = self.expert_policy if self._episode_expert else self.model_policy
            decision = replace(acting.decide(node), expert_used=self._episode_expert)
        else:
            decision = mixture_decide(self.model_policy, self.expert_policy, self.p_expert, node, self.rng)
        self.stats.decisions += 1
        self.stats.expert_decisions += int(decision.expert_used)
        if self.collector is not None:
            label = None
            if decision.expert_used:
                label = decision.var_index
            elif self.label_all:
                label = self.expert_policy.decide(node).var_index
            if label is not None:
                self.collector.append(extract_state(self.instance, node).with_label(label))
        return decision

    def observe(self, node, decision, down_lp, up_lp):
        acting = self.expert_policy if decision.expert_used else self.model_policy
        acting.observe(node, decision, down_lp, up_lp)


@dataclass
class Recorder(Policy):
    """Wraps a policy and keeps every (node, decision) pair it produced."""

    inner: Policy
    log: list[tuple[BnbNode, BranchDecision]] = field(default_factory=list)
    observed: list[tuple[int, LpSolution, LpSolution]] = field(default_factory=list)

    @property
    def name(self):
        return self.inner.name

    def reset(self, instance, rng):
        super().reset(instance, rng)
        self.inner.reset(instance, rng)

    def decide(self, node):
        d = self.inner.decide(node)
        self.log.append((node, d))
        return d

    def observe(self, node, decision, down_lp, up_lp):
        self.observed.append((decision.var_index, down_lp, up_lp))
        self.inner.observe(node, decision, down_lp, up_lp)


POLICY_FACTORIES: dict[str, Callable[[], Policy]] = {
    "sb": StrongBranching,
    "pseudocost": Pseudocost,
    "random": RandomBranching,
    "mostfrac": MostFractional,
}


def make_policy(spec: str) -> Policy:
    """Build a policy from a name: sb, pseudocost, random, mostfrac,
    model:<path>, or mixture:<path>:<p_expert>."""
    from .gcnn import load_model

    if spec in POLICY_FACTORIES:
        return POLICY_FACTORIES[spec]()
    kind, _, rest = spec.partition(":")
    if kind == "model" and rest:
        return ModelPolicy(load_model(rest), name=spec)
    if kind == "mixture" and rest:
        path, _, p = rest.rpartition(":")
        if not path:
            raise ValueError(f"mixture policy needs mixture:<path>:<p>, got {spec!r}")
        return Mixture(ModelPolicy(load_model(path)), StrongBranching(), float(p), name=spec)
    raise ValueError(
        f"unknown policy {spec!r}; expected one of {', '.join(POLICY_FACTORIES)}, model:<path>, mixture:<path>:<p>"
    )
