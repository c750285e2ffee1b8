"""Branch-and-bound driver with best-bound node selection and the dual-integral reward."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .lp import LpSolution, LpStatus, fractional_indices, solve_lp
from .milp import MilpInstance

PRUNE_TOL = 1e-9
DEFAULT_BUDGET = 100


class LpFailure(RuntimeError):
    """A node LP stopped at the iteration limit; dropping it would be unsound."""


class PolicyError(RuntimeError):
    pass


@dataclass(frozen=True)
class BnbNode:
    bound_overrides: dict[int, tuple[float, float]]
    lp: LpSolution
    depth: int
    node_id: int

    @property
    def bound(self) -> float:
        return self.lp.objective


@dataclass
class BnbTrace:
    z: list[float]
    z0: float
    incumbent: float | None
    steps_to_close: int | None
    policy_name: str
    seed: int
    incumbents: list[float | None] = field(default_factory=list)
    incumbent_x: np.ndarray | None = None

    @property
    def reward(self) -> float:
        return dual_integral(self)


def global_dual_bound(open_nodes: Sequence[BnbNode], incumbent: float | None = None) -> float:
    if open_nodes:
        return min(node.bound for node in open_nodes)
    if incumbent is None:
        return math.inf
    return incumbent


def dual_integral(trace: BnbTrace) -> float:
    """Area between the dual bound curve and the root bound, one unit per step."""
    if not trace.z:
        raise ValueError("empty trace")
    if not math.isfinite(trace.z0):
        # infeasible root: nothing to integrate
        return 0.0
    return math.fsum(z - trace.z0 for z in trace.z)


def child_bounds(node: BnbNode, instance: MilpInstance, j: int) -> tuple[dict, dict]:
    """Bound overrides of the (down, up) children when branching on variable j."""
    lb, ub = instance.var_lb[j], instance.var_ub[j]
    if j in node.bound_overrides:
        lb, ub = node.bound_overrides[j]
    xj = node.lp.x[j]
    down = dict(node.bound_overrides)
    up = dict(node.bound_overrides)
    down[j] = (lb, float(math.floor(xj)))
    up[j] = (float(math.ceil(xj)), ub)
    return down, up


def _snap(instance: MilpInstance, lp: LpSolution) -> tuple[float, np.ndarray]:
    """Round the integer part of an integral LP point; keep it if still feasible."""
    x = lp.x.copy()
    mask = np.array(instance.is_integer)
    x[mask] = np.round(x[mask])
    if instance.is_feasible(x):
        return instance.evaluate(x), x
    return lp.objective, lp.x


def run_bnb(
    instance: MilpInstance,
    policy,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    *,
    up_first: bool = False,
) -> BnbTrace:
    """Run ``budget`` branching steps and record the global dual bound after each.

    ``policy`` is reset with a fresh ``numpy.random.Generator`` derived from
    ``seed`` before the root is processed, so a run is a pure function of its
    arguments.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    policy.reset(instance, rng)
    name = getattr(policy, "name", type(policy).__name__)

    root_lp = solve_lp(instance)
    if root_lp.status is LpStatus.ITERATION_LIMIT:
        raise LpFailure("root LP hit the simplex iteration limit")
    if not root_lp.optimal:
        return BnbTrace([math.inf] * budget, math.inf, None, 0, name, seed, [None] * budget)
    z0 = root_lp.objective
    incumbent: float | None = None
    incumbent_x = None
    open_nodes: list[BnbNode] = []
    next_id = 1

    if fractional_indices(instance, root_lp.x):
        open_nodes.append(BnbNode({}, root_lp, 0, 0))
    else:
        incumbent, incumbent_x = _snap(instance, root_lp)

    z: list[float] = []
    incumbents: list[float | None] = []
    steps_to_close = 0 if not open_nodes else None
    last = z0

    for t in range(1, budget + 1):
        if not open_nodes:
            z.append(last)
            incumbents.append(incumbent)
            continue
        node = min(open_nodes, key=lambda nd: (nd.bound, nd.node_id))
        open_nodes.remove(node)
        try:
            decision = policy.decide(node)
        except Exception as exc:
            raise PolicyError(f"policy {name!r} failed at node {node.node_id} (depth {node.depth}): {exc}") from exc
        j = decision.var_index
        if j not in decision.candidate_set or j not in fractional_indices(instance, node.lp.x):
            raise PolicyError(f"policy {name!r} chose non-candidate variable {j} at node {node.node_id}")

        down_ov, up_ov = child_bounds(node, instance, j)
        if up_first:
            up_lp = solve_lp(instance, up_ov)
            down_lp = solve_lp(instance, down_ov)
        else:
            down_lp = solve_lp(instance, down_ov)
            up_lp = solve_lp(instance, up_ov)
        observe = getattr(policy, "observe", None)
        if observe is not None:
            observe(node, decision, down_lp, up_lp)

        for ov, lp in ((down_ov, down_lp), (up_ov, up_lp)):
            child_id = next_id
            next_id += 1
            if lp.status is LpStatus.ITERATION_LIMIT:
                raise LpFailure(f"child {child_id} of node {node.node_id} hit the simplex iteration limit")
            if not lp.optimal:
                continue
            if incumbent is not None and lp.objective >= incumbent - PRUNE_TOL:
                continue
            if fractional_indices(instance, lp.x):
                open_nodes.append(BnbNode(ov, lp, node.depth + 1, child_id))
            else:
                incumbent, incumbent_x = _snap(instance, lp)
                open_nodes = [nd for nd in open_nodes if nd.bound < incumbent - PRUNE_TOL]

        # a proven bound never regresses; max() absorbs LP round-off
        last = max(last, global_dual_bound(open_nodes, incumbent))
        z.append(last)
        incumbents.append(incumbent)
        if not open_nodes and steps_to_close is None:
            steps_to_close = t

    return BnbTrace(z, z0, incumbent, steps_to_close, name, seed, incumbents, incumbent_x)


def write_trace(trace: BnbTrace, path: str | Path) -> None:
    """CSV ``step,global_dual_bound,incumbent_or_empty`` plus a JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "global_dual_bound", "incumbent_or_empty"])
        for t, (zt, inc) in enumerate(zip(trace.z, trace.incumbents), start=1):
            w.writerow([t, repr(zt), "" if inc is None else repr(inc)])
    sidecar = {
        "z0": trace.z0,
        "policy_name": trace.policy_name,
        "seed": trace.seed,
        "reward": dual_integral(trace),
        "steps_to_close": trace.steps_to_close,
        "incumbent": trace.incumbent,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n")


def read_trace(path: str | Path) -> BnbTrace:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    z, incs = [], []
    with path.open() as fh:
        for row in csv.DictReader(fh):
            z.append(float(row["global_dual_bound"]))
            incs.append(float(row["incumbent_or_empty"]) if row["incumbent_or_empty"] else None)
    return BnbTrace(z, meta["z0"], meta["incumbent"], meta["steps_to_close"], meta["policy_name"], meta["seed"], incs)
