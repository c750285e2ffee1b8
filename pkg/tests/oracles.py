"""Independent reference computations used by the tests.

Nothing here calls the simplex or the B&B engine; each oracle is a
straight enumeration that is slow but obviously correct.
"""
from __future__ import annotations

import itertools

import numpy as np

from branchforge.lp import Infeasible, vertex_oracle
from branchforge.milp import MilpInstance


def _feasible_rows(inst: MilpInstance, X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    ok = np.ones(X.shape[0], dtype=bool)
    if inst.n_cons:
        act = X @ inst.dense_matrix().T
        for i, (s, b) in enumerate(zip(inst.sense, inst.rhs)):
            if s == "LE":
                ok &= act[:, i] <= b + tol
            elif s == "GE":
                ok &= act[:, i] >= b - tol
            else:
                ok &= np.abs(act[:, i] - b) <= tol
    return ok


def brute_force_optimum(inst: MilpInstance, limit: int = 1 << 16) -> float | None:
    """Minimum objective over every integer point of an all-integer instance, None if infeasible."""
    if not all(inst.is_integer):
        raise ValueError("brute force needs an all-integer instance")
    ranges = [range(int(lo), int(hi) + 1) for lo, hi in zip(inst.var_lb, inst.var_ub)]
    if np.prod([len(r) for r in ranges], dtype=float) > limit:
        raise ValueError("instance too large to enumerate")
    X = np.array(list(itertools.product(*ranges)), dtype=float).reshape(-1, inst.n_vars)
    ok = _feasible_rows(inst, X)
    if not ok.any():
        return None
    return float(np.min(X[ok] @ np.array(inst.obj)))


def assignment_optimum(inst: MilpInstance, n_items: int, n_bins: int) -> float:
    """Enumerate the n_bins ** n_items item-to-bin maps directly."""
    cost = np.array(inst.obj).reshape(n_items, n_bins)
    best = np.inf
    for bins in itertools.product(range(n_bins), repeat=n_items):
        x = np.zeros(n_items * n_bins)
        x[[i * n_bins + b for i, b in enumerate(bins)]] = 1.0
        if inst.is_feasible(x):
            best = min(best, float(sum(cost[i, b] for i, b in enumerate(bins))))
    return best


def child_gains_by_vertices(inst: MilpInstance, node_overrides: dict, x: np.ndarray, j: int,
                            node_bound: float, large: float = 1e10) -> tuple[float, float]:
    """(down, up) bound gains for branching on j, each child solved by vertex enumeration."""
    lo, hi = (inst.var_lb[j], inst.var_ub[j])
    lo, hi = node_overrides.get(j, (lo, hi))
    down = dict(node_overrides)
    down[j] = (lo, float(np.floor(x[j])))
    up = dict(node_overrides)
    up[j] = (float(np.ceil(x[j])), hi)
    gains = []
    for ov in (down, up):
        try:
            gains.append(vertex_oracle(inst, ov) - node_bound)
        except Infeasible:
            gains.append(large)
    return gains[0], gains[1]


def sb_choice_by_vertices(inst: MilpInstance, x: np.ndarray, node_bound: float, eps: float = 1e-6,
                          overrides: dict | None = None) -> int:
    """Strong branching re-derived from vertex enumeration; ties go to the lowest index."""
    overrides = overrides or {}
    best_j, best = None, -np.inf
    for j in range(inst.n_vars):
        if not inst.is_integer[j] or abs(x[j] - round(x[j])) <= 1e-6:
            continue
        d, u = child_gains_by_vertices(inst, overrides, x, j, node_bound)
        score = max(d, eps) * max(u, eps)
        # compare with a relative margin so rounding noise does not reorder exact ties
        if best_j is None or score > best * (1 + 1e-9) + 1e-15:
            best_j, best = j, score
    return best_j


def straight_sum(values) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


def random_lp(rng: np.random.Generator, n: int, m: int, integer: bool = False) -> MilpInstance:
    """Small box-bounded instance with integer data and mixed row senses."""
    lb = rng.integers(-3, 1, size=n).astype(float)
    ub = lb + rng.integers(0, 5, size=n)
    rows = []
    for _ in range(m):
        cols = sorted(rng.choice(n, size=rng.integers(1, n + 1), replace=False).tolist())
        rows.append(tuple((int(j), float(rng.integers(1, 6) * rng.choice([-1, 1]))) for j in cols))
    return MilpInstance(
        obj=tuple(float(c) for c in rng.integers(-9, 10, size=n)),
        var_lb=tuple(lb), var_ub=tuple(float(u) for u in ub),
        is_integer=(integer,) * n,
        rows=tuple(rows),
        sense=tuple(str(s) for s in rng.choice(["LE", "GE", "EQ"], size=m, p=[0.45, 0.45, 0.1])),
        rhs=tuple(float(b) for b in rng.integers(-6, 7, size=m)),
        name="random-lp",
    )
