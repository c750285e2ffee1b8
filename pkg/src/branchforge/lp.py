"""LP relaxations: a bounded-variable primal simplex and a vertex-enumeration oracle.

The simplex works on a dense tableau. Every row ``a_i x + s_i = b_i`` gets a
slack whose bounds encode the row sense (LE: s >= 0, GE: s <= 0, EQ: s = 0)
and an artificial used only in phase one. Instances are tiny, so each solve
starts cold; nothing is warm-started between nodes.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .milp import MilpInstance

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIVOT_TOL = 1e-9

BoundOverrides = Mapping[int, tuple[float, float]]


class LpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"


class VarStatus(enum.IntEnum):
    BASIC = 0
    AT_LOWER = 1
    AT_UPPER = 2


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    basis: tuple[VarStatus, ...]
    iterations: int
    slacks: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class TooLarge(ValueError):
    pass


class Infeasible(Exception):
    """Raised by the vertex oracle when the polytope is empty."""


def effective_bounds(instance: MilpInstance, overrides: BoundOverrides | None) -> tuple[np.ndarray, np.ndarray]:
    lb = np.array(instance.var_lb, dtype=float)
    ub = np.array(instance.var_ub, dtype=float)
    for j, (lo, hi) in (overrides or {}).items():
        lb[j], ub[j] = lo, hi
    return lb, ub


class _Simplex:
    """One bounded-variable primal simplex run over a full dense tableau."""

    def __init__(self, instance: MilpInstance, lb: np.ndarray, ub: np.ndarray):
        n, m = instance.n_vars, instance.n_cons
        self.n, self.m = n, m
        a = instance.dense_matrix()
        b = np.array(instance.rhs, dtype=float)

        slack_lb = np.zeros(m)
        slack_ub = np.zeros(m)
        for i, s in enumerate(instance.sense):
            if s == "LE":
                slack_ub[i] = np.inf
            elif s == "GE":
                slack_lb[i] = -np.inf

        # columns: structurals | slacks | artificials
        self.lo = np.concatenate([lb, slack_lb, np.zeros(m)])
        self.hi = np.concatenate([ub, slack_ub, np.full(m, np.inf)])
        self.at_upper = np.zeros(n + 2 * m, dtype=bool)
        self.at_upper[n:n + m] = slack_lb == -np.inf
        self.value = np.concatenate([lb, np.zeros(2 * m)])

        resid = b - a @ lb
        sign = np.where(resid >= 0, 1.0, -1.0)
        self.full = np.hstack([a, np.eye(m), np.diag(sign)])
        self.b = b
        self.basis = np.arange(n + m, n + 2 * m)
        self.is_basic = np.zeros(n + 2 * m, dtype=bool)
        self.is_basic[self.basis] = True
        # B^-1 of the artificial basis is diag(sign)
        self.tableau = self.full * sign[:, None]
        self.value[self.basis] = np.abs(resid)

        self.max_iter = 50 * (n + m)
        self.iterations = 0
        self.degenerate_pivots = 0
        self.bland = False

    def _entering(self, d: np.ndarray, eligible: np.ndarray) -> tuple[int, float]:
        improve_up = (~self.at_upper) & (d < -OPT_TOL)
        improve_down = self.at_upper & (d > OPT_TOL)
        cand = eligible & ~self.is_basic & (improve_up | improve_down) & (self.hi > self.lo)
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return -1, 0.0
        if self.bland:
            q = int(idx[0])
        else:
            q = int(idx[np.argmax(np.abs(d[idx]))])
        return q, (-1.0 if self.at_upper[q] else 1.0)

    def run(self, cost: np.ndarray, eligible: np.ndarray) -> LpStatus:
        degenerate_limit = 2 * max(self.n, 1)
        while True:
            d = cost - cost[self.basis] @ self.tableau
            q, direction = self._entering(d, eligible)
            if q < 0:
                return LpStatus.OPTIMAL
            if self.iterations >= self.max_iter:
                return LpStatus.ITERATION_LIMIT
            self.iterations += 1

            alpha = direction * self.tableau[:, q]
            xb = self.value[self.basis]
            lo_b, hi_b = self.lo[self.basis], self.hi[self.basis]
            step = self.hi[q] - self.lo[q]
            leave = -1
            leave_to_upper = False
            best_pivot = 0.0
            for r in range(self.m):
                ar = alpha[r]
                if ar > PIVOT_TOL and np.isfinite(lo_b[r]):
                    t = max((xb[r] - lo_b[r]) / ar, 0.0)
                    to_upper = False
                elif ar < -PIVOT_TOL and np.isfinite(hi_b[r]):
                    t = max((hi_b[r] - xb[r]) / -ar, 0.0)
                    to_upper = True
                else:
                    continue
                better = t < step - 1e-12
                tie = not better and t <= step + 1e-12 and leave >= 0
                if tie:
                    if self.bland:
                        better = self.basis[r] < self.basis[leave]
                    else:
                        better = abs(ar) > best_pivot
                if better:
                    step, leave, leave_to_upper, best_pivot = t, r, to_upper, abs(ar)

            if not np.isfinite(step):
                raise RuntimeError("LP unbounded; all structural variables must be boxed")
            if step <= 1e-12:
                self.degenerate_pivots += 1
                if self.degenerate_pivots >= degenerate_limit:
                    self.bland = True

            self.value[self.basis] = xb - step * alpha
            self.value[q] += direction * step
            if leave < 0:
                # bound flip, basis unchanged
                self.at_upper[q] = not self.at_upper[q]
                self.value[q] = self.hi[q] if self.at_upper[q] else self.lo[q]
                continue
            out = self.basis[leave]
            self._pivot(leave, q)
            self.at_upper[out] = leave_to_upper
            self.value[out] = self.hi[out] if leave_to_upper else self.lo[out]

    def _pivot(self, r: int, q: int) -> None:
        t = self.tableau
        t[r] /= t[r, q]
        col = t[:, q].copy()
        col[r] = 0.0
        t -= np.outer(col, t[r])
        out = self.basis[r]
        self.is_basic[out] = False
        self.is_basic[q] = True
        self.basis[r] = q
        self.at_upper[q] = False

    def drive_out_artificials(self) -> None:
        n, m = self.n, self.m
        for r in range(m):
            if self.basis[r] < n + m:
                continue
            row = self.tableau[r, : n + m]
            cand = np.flatnonzero((np.abs(row) > 1e-7) & ~self.is_basic[: n + m])
            if cand.size:
                q = int(cand[np.argmax(np.abs(row[cand]))])
                keep = self.value[q]
                art = self.basis[r]
                self._pivot(r, q)
                self.value[q] = keep
                self.value[art] = 0.0


def solve_lp(instance: MilpInstance, bound_overrides: BoundOverrides | None = None) -> LpSolution:
    """Solve the LP relaxation of ``instance`` with optional per-variable bound overrides."""
    lb, ub = effective_bounds(instance, bound_overrides)
    if np.any(lb > ub):
        raise ValueError("bound overrides must keep lb <= ub")
    n, m = instance.n_vars, instance.n_cons
    c = np.array(instance.obj, dtype=float)

    if m == 0:
        x = np.where(c < 0, ub, lb)
        basis = tuple(VarStatus.AT_UPPER if c[j] < 0 else VarStatus.AT_LOWER for j in range(n))
        return LpSolution(LpStatus.OPTIMAL, x, float(c @ x), np.zeros(0), c.copy(), basis, 0, np.zeros(0))

    sx = _Simplex(instance, lb, ub)
    total = n + 2 * m
    eligible = np.ones(total, dtype=bool)

    phase1_cost = np.concatenate([np.zeros(n + m), np.ones(m)])
    status = sx.run(phase1_cost, eligible)
    if status is LpStatus.ITERATION_LIMIT:
        return _failed(status, n, m, sx.iterations)
    infeas = float(np.sum(sx.value[n + m:]))
    scale = 1.0 + float(np.max(np.abs(instance.rhs)))
    if infeas > FEAS_TOL * scale:
        return _failed(LpStatus.INFEASIBLE, n, m, sx.iterations)

    # phase two: artificials pinned at zero and never re-enter
    sx.value[n + m:] = np.where(sx.is_basic[n + m:], sx.value[n + m:], 0.0)
    sx.hi[n + m:] = 0.0
    sx.drive_out_artificials()
    eligible[n + m:] = False
    sx.degenerate_pivots = 0
    sx.bland = False
    cost = np.concatenate([c, np.zeros(2 * m)])
    status = sx.run(cost, eligible)
    if status is LpStatus.ITERATION_LIMIT:
        return _failed(status, n, m, sx.iterations)
    return _finish(instance, sx, cost, lb, ub)


def _failed(status: LpStatus, n: int, m: int, iterations: int) -> LpSolution:
    nan_n = np.full(n, np.nan)
    return LpSolution(status, nan_n, np.inf if status is LpStatus.INFEASIBLE else np.nan,
                      np.full(m, np.nan), nan_n.copy(), tuple([VarStatus.AT_LOWER] * n), iterations)


def _finish(instance: MilpInstance, sx: _Simplex, cost: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> LpSolution:
    n, m = sx.n, sx.m
    # recompute primal and dual values from the original columns to shed drift
    bmat = sx.full[:, sx.basis]
    nonbasic = np.flatnonzero(~sx.is_basic)
    rhs = sx.b - sx.full[:, nonbasic] @ sx.value[nonbasic]
    xb = np.linalg.solve(bmat, rhs)
    value = sx.value.copy()
    value[sx.basis] = xb
    y = np.linalg.solve(bmat.T, cost[sx.basis])
    a = instance.dense_matrix()
    c = cost[:n]
    x = np.clip(value[:n], lb, ub)
    d = c - a.T @ y

    basis = []
    for j in range(n):
        if sx.is_basic[j]:
            basis.append(VarStatus.BASIC)
        elif lb[j] == ub[j]:
            # a fixed variable may carry either sign of reduced cost
            basis.append(VarStatus.AT_UPPER if d[j] < 0 else VarStatus.AT_LOWER)
        else:
            basis.append(VarStatus.AT_UPPER if sx.at_upper[j] else VarStatus.AT_LOWER)
    for j in range(n):
        if basis[j] is VarStatus.BASIC:
            d[j] = 0.0 if abs(d[j]) <= 1e-9 else d[j]
    slacks = np.array(instance.rhs) - a @ x
    return LpSolution(LpStatus.OPTIMAL, x, float(c @ x), y, d, tuple(basis), sx.iterations, slacks)


def dual_objective(instance: MilpInstance, sol: LpSolution, bound_overrides: BoundOverrides | None = None) -> float:
    """Lagrangian dual value implied by the row duals and reduced costs."""
    lb, ub = effective_bounds(instance, bound_overrides)
    d = sol.reduced_costs
    bound_term = np.where(d > 0, d * lb, d * ub)
    return float(np.dot(instance.rhs, sol.duals) + bound_term.sum())


def vertex_oracle(instance: MilpInstance, bound_overrides: BoundOverrides | None = None) -> float:
    """Exact LP optimum by enumerating every vertex of the box-and-rows polytope.

    A vertex fixes each variable at a bound or leaves it free; the free ones
    are pinned by an equal number of rows holding with equality. Raises
    Infeasible when no candidate vertex is feasible.
    """
    n, m = instance.n_vars, instance.n_cons
    if n > 8 or m > 8:
        raise TooLarge(f"vertex enumeration limited to 8 variables and 8 rows, got {n} and {m}")
    lb, ub = effective_bounds(instance, bound_overrides)
    a = instance.dense_matrix()
    b = np.array(instance.rhs, dtype=float)
    c = np.array(instance.obj, dtype=float)
    tol = 1e-9

    def feasible(x: np.ndarray) -> bool:
        if np.any(x < lb - tol) or np.any(x > ub + tol):
            return False
        act = a @ x
        for ai, s, bi in zip(act, instance.sense, b):
            if (s == "LE" and ai > bi + tol) or (s == "GE" and ai < bi - tol) or (s == "EQ" and abs(ai - bi) > tol):
                return False
        return True

    best = np.inf
    for choice in itertools.product((0, 1, 2), repeat=n):
        free = [j for j in range(n) if choice[j] == 2]
        fixed = [j for j in range(n) if choice[j] != 2]
        x = np.zeros(n)
        for j in fixed:
            x[j] = lb[j] if choice[j] == 0 else ub[j]
        k = len(free)
        if k > m:
            continue
        rows_iter = itertools.combinations(range(m), k) if k else [()]
        for rows in rows_iter:
            if k:
                sub = a[np.ix_(rows, free)]
                if abs(np.linalg.det(sub)) < 1e-12:
                    continue
                rhs = b[list(rows)] - a[np.ix_(rows, fixed)] @ x[fixed]
                x[free] = np.linalg.solve(sub, rhs)
            if feasible(x):
                best = min(best, float(c @ x))
    if not np.isfinite(best):
        raise Infeasible("no feasible vertex")
    return best


INT_TOL = 1e-6


def fractional_indices(instance: MilpInstance, x: np.ndarray) -> list[int]:
    """Integer variables whose LP value is more than INT_TOL from an integer."""
    return [
        j for j in range(instance.n_vars)
        if instance.is_integer[j] and abs(x[j] - round(x[j])) > INT_TOL
    ]
