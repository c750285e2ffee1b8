"""MILP instances: representation, canonical form, generators and file I/O.

Instances are always stored in minimization form. A maximization problem is
negated on load and remembers that through ``sign_flip`` so objectives can be
reported in the original orientation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

SCHEMA_VERSION = 1
SENSES = ("LE", "GE", "EQ")
_MAX_RESAMPLES = 100


class InstanceError(ValueError):
    """Base class for malformed or unbuildable instances."""


class IndexOutOfRange(InstanceError):
    pass


class InfiniteBoundOnIntegerVar(InstanceError):
    pass


class DegenerateParameters(InstanceError):
    pass


class ParseError(InstanceError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line


class SchemaVersionMismatch(InstanceError):
    pass


@dataclass(frozen=True)
class MilpInstance:
    """Minimization MILP with sparse rows and finite variable bounds."""

    obj: tuple[float, ...]
    var_lb: tuple[float, ...]
    var_ub: tuple[float, ...]
    is_integer: tuple[bool, ...]
    rows: tuple[tuple[tuple[int, float], ...], ...]
    sense: tuple[str, ...]
    rhs: tuple[float, ...]
    name: str = "instance"
    sign_flip: bool = False
    _dense: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.obj)
        if not (len(self.var_lb) == len(self.var_ub) == len(self.is_integer) == n):
            raise InstanceError("obj, lb, ub and integer vectors must have equal length")
        if not (len(self.rows) == len(self.sense) == len(self.rhs)):
            raise InstanceError("rows, sense and rhs must have equal length")
        for i, row in enumerate(self.rows):
            seen = set()
            for j, _ in row:
                if not 0 <= j < n:
                    raise IndexOutOfRange(f"row {i} references variable {j} but n_vars={n}")
                if j in seen:
                    raise InstanceError(f"row {i} lists variable {j} twice")
                seen.add(j)
        for i, s in enumerate(self.sense):
            if s not in SENSES:
                raise InstanceError(f"row {i} has unknown sense {s!r}")
        for j in range(n):
            lb, ub = self.var_lb[j], self.var_ub[j]
            if self.is_integer[j]:
                if not (math.isfinite(lb) and math.isfinite(ub)):
                    raise InfiniteBoundOnIntegerVar(f"integer variable {j} has bounds [{lb}, {ub}]")
                if lb != math.floor(lb) or ub != math.floor(ub):
                    raise InstanceError(f"integer variable {j} has fractional bounds [{lb}, {ub}]")
            if not (math.isfinite(lb) and math.isfinite(ub)):
                raise InstanceError(f"variable {j} must have finite bounds")
            if lb > ub:
                raise InstanceError(f"variable {j} has lb {lb} > ub {ub}")

    @property
    def n_vars(self) -> int:
        return len(self.obj)

    @property
    def n_cons(self) -> int:
        return len(self.rows)

    @property
    def nnz(self) -> int:
        return sum(len(r) for r in self.rows)

    def dense_matrix(self) -> np.ndarray:
        """The constraint matrix as a dense (n_cons, n_vars) array, cached."""
        if self._dense is None:
            a = np.zeros((self.n_cons, self.n_vars))
            for i, row in enumerate(self.rows):
                for j, v in row:
                    a[i, j] = v
            a.setflags(write=False)
            object.__setattr__(self, "_dense", a)
        return self._dense

    def report(self, value: float) -> float:
        """Convert a canonical (minimize) objective to the original orientation."""
        return -value if self.sign_flip else value

    def evaluate(self, x: Sequence[float]) -> float:
        return float(np.dot(self.obj, x))

    def is_feasible(self, x: Sequence[float], tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if np.any(x < np.asarray(self.var_lb) - tol) or np.any(x > np.asarray(self.var_ub) + tol):
            return False
        act = self.dense_matrix() @ x if self.n_cons else np.zeros(0)
        for a, s, b in zip(act, self.sense, self.rhs):
            if s == "LE" and a > b + tol:
                return False
            if s == "GE" and a < b - tol:
                return False
            if s == "EQ" and abs(a - b) > tol:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "name": self.name,
            "n_vars": self.n_vars,
            "obj": list(self.obj),
            "lb": list(self.var_lb),
            "ub": list(self.var_ub),
            "integer": list(self.is_integer),
            "rows": [[[j, a] for j, a in row] for row in self.rows],
            "sense": list(self.sense),
            "rhs": list(self.rhs),
            "sign_flip": self.sign_flip,
        }


def _build(
    obj, lb, ub, integer, rows, sense, rhs, name="instance", sign_flip=False
) -> MilpInstance:
    return MilpInstance(
        obj=tuple(float(c) for c in obj),
        var_lb=tuple(float(v) for v in lb),
        var_ub=tuple(float(v) for v in ub),
        is_integer=tuple(bool(v) for v in integer),
        rows=tuple(tuple((int(j), float(a)) for j, a in row) for row in rows),
        sense=tuple(str(s) for s in sense),
        rhs=tuple(float(b) for b in rhs),
        name=str(name),
        sign_flip=bool(sign_flip),
    )


def canonicalize(raw: MilpInstance | Mapping) -> MilpInstance:
    """Bring an instance into minimization form.

    ``raw`` is either a MilpInstance (already canonical, returned as is) or a
    mapping in the file schema, optionally carrying ``"objective": "max"``.
    A maximization objective is negated and ``sign_flip`` toggled. Constraint
    senses are never rewritten.
    """
    if isinstance(raw, MilpInstance):
        return raw
    n = int(raw.get("n_vars", len(raw["obj"])))
    obj = [float(c) for c in raw["obj"]]
    if len(obj) != n:
        raise InstanceError(f"obj has {len(obj)} entries but n_vars={n}")
    direction = str(raw.get("objective", "min")).lower()
    if direction not in ("min", "max", "minimize", "maximize"):
        raise InstanceError(f"unknown objective direction {direction!r}")
    sign_flip = bool(raw.get("sign_flip", False))
    if direction.startswith("max"):
        obj = [-c for c in obj]
        sign_flip = not sign_flip
    return _build(
        obj,
        raw.get("lb", [0.0] * n),
        raw.get("ub", [1.0] * n),
        raw.get("integer", [True] * n),
        raw.get("rows", []),
        raw.get("sense", []),
        raw.get("rhs", []),
        name=raw.get("name", "instance"),
        sign_flip=sign_flip,
    )


def _check_params(**conds: bool) -> None:
    bad = [k for k, ok in conds.items() if not ok]
    if bad:
        raise DegenerateParameters("invalid generator parameters: " + ", ".join(bad))


def gen_set_cover(seed: int, n_items: int, n_sets: int, density: float) -> MilpInstance:
    """Random weighted set cover in which every item lies in at least two sets."""
    _check_params(
        n_items_ge_2=n_items >= 2, n_sets_ge_n_items=n_sets >= n_items, density_open=0 < density < 1
    )
    rng = np.random.default_rng(seed)
    for _ in range(_MAX_RESAMPLES):
        member = rng.random((n_items, n_sets)) < density
        if np.all(member.sum(axis=1) >= 2):
            break
    else:
        raise DegenerateParameters(
            f"could not cover every item twice after {_MAX_RESAMPLES} draws "
            f"(n_items={n_items}, n_sets={n_sets}, density={density})"
        )
    costs = rng.integers(1, 101, size=n_sets)
    rows = [[(int(j), 1.0) for j in np.flatnonzero(member[i])] for i in range(n_items)]
    return _build(
        costs,
        [0.0] * n_sets,
        [1.0] * n_sets,
        [True] * n_sets,
        rows,
        ["GE"] * n_items,
        [1.0] * n_items,
        name=f"setcover-s{seed}-{n_items}x{n_sets}",
    )


def gen_assignment(seed: int, n_items: int, n_bins: int) -> MilpInstance:
    """Generalized assignment: each item to exactly one capacitated bin.

    Variable ``i * n_bins + b`` is 1 when item i goes to bin b.
    """
    _check_params(n_items_ge_2=n_items >= 2, n_bins_ge_2=n_bins >= 2)
    rng = np.random.default_rng(seed)
    for _ in range(_MAX_RESAMPLES):
        sizes = rng.integers(1, 11, size=n_items)
        # capacities tight enough to bind but loose enough to usually admit a packing
        total = int(sizes.sum())
        caps = rng.integers(max(1, (total * 6) // (5 * n_bins)), max(2, (total * 8) // (5 * n_bins)) + 1, size=n_bins)
        if _greedy_packing(sizes, caps) is not None:
            break
    else:
        raise DegenerateParameters(
            f"no feasible packing found after {_MAX_RESAMPLES} draws (n_items={n_items}, n_bins={n_bins})"
        )
    costs = rng.integers(1, 101, size=(n_items, n_bins))
    nv = n_items * n_bins
    rows, sense, rhs = [], [], []
    for i in range(n_items):
        rows.append([(i * n_bins + b, 1.0) for b in range(n_bins)])
        sense.append("EQ")
        rhs.append(1.0)
    for b in range(n_bins):
        rows.append([(i * n_bins + b, float(sizes[i])) for i in range(n_items)])
        sense.append("LE")
        rhs.append(float(caps[b]))
    return _build(
        costs.ravel(),
        [0.0] * nv,
        [1.0] * nv,
        [True] * nv,
        rows,
        sense,
        rhs,
        name=f"assignment-s{seed}-{n_items}x{n_bins}",
    )


def _greedy_packing(sizes, caps) -> list[int] | None:
    """First-fit decreasing; returns a bin per item or None."""
    remaining = [int(c) for c in caps]
    placement = [-1] * len(sizes)
    for i in sorted(range(len(sizes)), key=lambda k: (-int(sizes[k]), k)):
        for b, room in enumerate(remaining):
            if sizes[i] <= room:
                remaining[b] -= int(sizes[i])
                placement[i] = b
                break
        else:
            return None
    return placement


def duplicate_column_instance(n_vars: int = 6, weight: float = 2.0, capacity: float = 5.0) -> MilpInstance:
    """max sum x s.t. weight * sum x <= capacity, every column identical.

    Branching on any fractional variable leaves both child LP bounds equal to
    the parent's because an identical twin absorbs the change.
    """
    _check_params(n_vars_ge_2=n_vars >= 2, capacity_fractional=capacity / weight != math.floor(capacity / weight))
    raw = {
        "objective": "max",
        "name": f"dupcol-{n_vars}",
        "n_vars": n_vars,
        "obj": [1.0] * n_vars,
        "lb": [0.0] * n_vars,
        "ub": [1.0] * n_vars,
        "integer": [True] * n_vars,
        "rows": [[[j, weight] for j in range(n_vars)]],
        "sense": ["LE"],
        "rhs": [capacity],
    }
    return canonicalize(raw)


def _require(d: Mapping, key: str):
    if key not in d:
        raise ParseError("missing required field", field=key)
    return d[key]


def _float_list(d: Mapping, key: str, n: int | None = None) -> list[float]:
    vals = _require(d, key)
    if not isinstance(vals, list):
        raise ParseError("expected a list", field=key)
    out = []
    for k, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"entry {k} is not a number: {v!r}", field=key)
        out.append(float(v))
    if n is not None and len(out) != n:
        raise ParseError(f"expected {n} entries, got {len(out)}", field=key)
    return out


def instance_from_dict(d: Mapping) -> MilpInstance:
    version = _require(d, "version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"file has schema version {version}, expected {SCHEMA_VERSION}")
    n = _require(d, "n_vars")
    if not isinstance(n, int) or n < 0:
        raise ParseError("must be a non-negative integer", field="n_vars")
    obj = _float_list(d, "obj", n)
    lb = _float_list(d, "lb", n)
    ub = _float_list(d, "ub", n)
    integer = _require(d, "integer")
    if not isinstance(integer, list) or len(integer) != n or not all(isinstance(v, bool) for v in integer):
        raise ParseError(f"expected {n} booleans", field="integer")
    rows_raw = _require(d, "rows")
    if not isinstance(rows_raw, list):
        raise ParseError("expected a list of rows", field="rows")
    rows = []
    for i, row in enumerate(rows_raw):
        try:
            rows.append([(int(j), float(a)) for j, a in row])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"row {i} is not a list of [index, coefficient] pairs", field="rows") from exc
    sense = _require(d, "sense")
    if not isinstance(sense, list) or len(sense) != len(rows):
        raise ParseError(f"expected {len(rows)} senses", field="sense")
    for i, s in enumerate(sense):
        if s not in SENSES:
            raise ParseError(f"row {i} has sense {s!r}; allowed: {', '.join(SENSES)}", field="sense")
    rhs = _float_list(d, "rhs", len(rows))
    sign_flip = d.get("sign_flip", False)
    if not isinstance(sign_flip, bool):
        raise ParseError("expected a boolean", field="sign_flip")
    try:
        return _build(obj, lb, ub, integer, rows, sense, rhs, name=d.get("name", "instance"), sign_flip=sign_flip)
    except InstanceError as exc:
        raise ParseError(str(exc)) from exc


def dumps_instance(instance: MilpInstance) -> str:
    # json emits float repr, the shortest string that round-trips exactly
    return json.dumps(instance.to_dict(), indent=1) + "\n"


def write_instance(instance: MilpInstance, path: str | Path) -> None:
    Path(path).write_text(dumps_instance(instance))


def read_instance(path: str | Path) -> MilpInstance:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    if not isinstance(d, dict):
        raise ParseError("top level must be an object")
    return instance_from_dict(d)
