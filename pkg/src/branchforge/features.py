"""Bipartite state extraction: variables and constraints as two node sets.

Variable features (10 columns)::

    0 obj_j / max|obj|      5 fractionality x_j - floor(x_j) (integer vars)
    1 lb_j (node bound)     6 is basic
    2 ub_j (node bound)     7 reduced_cost_j / max|obj|
    3 is integer            8 at lower bound
    4 x_j                   9 at upper bound

Constraint features (5 columns)::

    0 rhs_i / max|row_i|
    1 sense code: LE -1, EQ 0, GE +1
    2 dual_i * max|row_i| / max|obj|  (dual of the normalized row)
    3 slack_i / max|row_i|
    4 tight flag, |normalized slack| <= 1e-7

Edge feature: A_ij / max|row_i|. Everything is clipped to [-10, 10].
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .lp import LpSolution, VarStatus, effective_bounds, fractional_indices
from .milp import MilpInstance

N_VAR_FEATURES = 10
N_CON_FEATURES = 5
N_EDGE_FEATURES = 1
CLIP = 10.0
TIGHT_TOL = 1e-7
_SENSE_CODE = {"LE": -1.0, "EQ": 0.0, "GE": 1.0}


class NonOptimalLp(ValueError):
    pass


@dataclass(frozen=True)
class BipartiteState:
    var_features: np.ndarray        # (n, 10)
    con_features: np.ndarray        # (m, 5)
    edge_con: np.ndarray            # (nnz,) constraint index i
    edge_var: np.ndarray            # (nnz,) variable index j
    edge_features: np.ndarray       # (nnz, 1)
    candidate_mask: np.ndarray      # (n,) bool
    expert_action: int | None = None

    @property
    def n(self) -> int:
        return self.var_features.shape[0]

    @property
    def m(self) -> int:
        return self.con_features.shape[0]

    @property
    def nnz(self) -> int:
        return self.edge_con.shape[0]

    @property
    def candidates(self) -> np.ndarray:
        return np.flatnonzero(self.candidate_mask)

    @cached_property
    def incidence(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense (m, n) 0/1 incidence plus per-constraint and per-variable edge-feature sums."""
        inc = np.zeros((self.m, self.n))
        inc[self.edge_con, self.edge_var] = 1.0
        esum_c = np.zeros((self.m, self.edge_features.shape[1]))
        esum_v = np.zeros((self.n, self.edge_features.shape[1]))
        np.add.at(esum_c, self.edge_con, self.edge_features)
        np.add.at(esum_v, self.edge_var, self.edge_features)
        return inc, esum_c, esum_v

    def with_label(self, action: int) -> "BipartiteState":
        if not self.candidate_mask[action]:
            raise ValueError(f"label {action} is not a branching candidate")
        return replace(self, expert_action=int(action))


def extract_state(instance: MilpInstance, node, lp: LpSolution | None = None) -> BipartiteState:
    """Featurize a B&B node. ``node`` supplies ``bound_overrides`` (and ``lp`` if not given)."""
    lp = node.lp if lp is None else lp
    if not lp.optimal:
        raise NonOptimalLp(f"cannot featurize an LP with status {lp.status.value}")
    overrides = getattr(node, "bound_overrides", None) if node is not None else None
    lb, ub = effective_bounds(instance, overrides)
    n, m = instance.n_vars, instance.n_cons
    obj = np.array(instance.obj, dtype=float)
    obj_norm = float(np.max(np.abs(obj))) if n else 0.0
    obj_norm = obj_norm if obj_norm > 0 else 1.0

    x = lp.x
    is_int = np.array(instance.is_integer, dtype=float)
    frac = np.where(is_int > 0, x - np.floor(x), 0.0)
    frac = np.where(np.abs(frac - np.round(frac)) <= 1e-6, 0.0, frac)
    status = np.array([int(s) for s in lp.basis])
    v = np.column_stack([
        obj / obj_norm,
        lb,
        ub,
        is_int,
        x,
        frac,
        status == VarStatus.BASIC,
        lp.reduced_costs / obj_norm,
        status == VarStatus.AT_LOWER,
        status == VarStatus.AT_UPPER,
    ]).astype(float)

    row_norm = np.array([max((abs(a) for _, a in row), default=0.0) for row in instance.rows])
    row_norm = np.where(row_norm > 0, row_norm, 1.0)
    rhs = np.array(instance.rhs, dtype=float)
    slack = lp.slacks if lp.slacks is not None else rhs - instance.dense_matrix() @ x
    norm_slack = slack / row_norm
    c = np.column_stack([
        rhs / row_norm,
        [_SENSE_CODE[s] for s in instance.sense],
        lp.duals * row_norm / obj_norm,
        norm_slack,
        np.abs(norm_slack) <= TIGHT_TOL,
    ]).astype(float).reshape(m, N_CON_FEATURES)

    edge_con, edge_var, edge_val = [], [], []
    for i, row in enumerate(instance.rows):
        for j, a in row:
            if a != 0.0:
                edge_con.append(i)
                edge_var.append(j)
                edge_val.append(a / row_norm[i])

    mask = np.zeros(n, dtype=bool)
    mask[fractional_indices(instance, x)] = True
    return BipartiteState(
        var_features=np.clip(v, -CLIP, CLIP),
        con_features=np.clip(c, -CLIP, CLIP),
        edge_con=np.array(edge_con, dtype=np.int64),
        edge_var=np.array(edge_var, dtype=np.int64),
        edge_features=np.clip(np.array(edge_val, dtype=float), -CLIP, CLIP).reshape(-1, N_EDGE_FEATURES),
        candidate_mask=mask,
    )


def state_to_record(state: BipartiteState) -> dict:
    return {
        "n": state.n,
        "m": state.m,
        "nnz": state.nnz,
        "expert_action": state.expert_action,
        "V": state.var_features.ravel().tolist(),
        "C": state.con_features.ravel().tolist(),
        "E": np.column_stack([state.edge_con, state.edge_var, state.edge_features[:, 0]]).ravel().tolist(),
        "mask": state.candidate_mask.astype(int).tolist(),
    }


def state_from_record(rec: dict) -> BipartiteState:
    n, m, nnz = rec["n"], rec["m"], rec["nnz"]
    e = np.array(rec["E"], dtype=float).reshape(nnz, 3)
    return BipartiteState(
        var_features=np.array(rec["V"], dtype=float).reshape(n, N_VAR_FEATURES),
        con_features=np.array(rec["C"], dtype=float).reshape(m, N_CON_FEATURES),
        edge_con=e[:, 0].astype(np.int64),
        edge_var=e[:, 1].astype(np.int64),
        edge_features=e[:, 2:3].copy(),
        candidate_mask=np.array(rec["mask"], dtype=bool),
        expert_action=rec["expert_action"],
    )


def write_samples(states: Iterable[BipartiteState], path: str | Path) -> int:
    """One JSON record per line; returns the number written."""
    count = 0
    with Path(path).open("w") as fh:
        for s in states:
            fh.write(json.dumps(state_to_record(s), separators=(",", ":")) + "\n")
            count += 1
    return count


def read_samples(path: str | Path) -> list[BipartiteState]:
    return list(iter_samples(path))


def iter_samples(path: str | Path) -> Iterator[BipartiteState]:
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                yield state_from_record(json.loads(line))
