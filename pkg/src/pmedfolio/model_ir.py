"""Solver-agnostic linear program container with integrality marks.

A :class:`MilpModel` stores a linear objective, per-variable bounds and
integrality, and two-sided (range) rows; equalities are encoded as
``lower == upper``.  The module also carries the solution records shared by
the LP and MILP engines and a brute-force enumeration solver used as an
independent test oracle.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

MINIMIZE = "minimize"
MAXIMIZE = "maximize"
CONTINUOUS = "continuous"
BINARY = "binary"

#: guard for the relative-gap denominator on zero-objective instances
GAP_DENOM_FLOOR = 1e-10


class UnknownVariableError(KeyError):
    """Raised when an assignment touches a variable that is not binary."""


class TooManyBinariesError(ValueError):
    """Raised when brute-force enumeration would exceed its size cap."""


class SerializationError(ValueError):
    """Raised on malformed model text."""


def relative_gap(best_bound: float, objective: float) -> float:
    """|best_bound - objective| / max(1e-10, |objective|)."""
    return abs(best_bound - objective) / max(GAP_DENOM_FLOOR, abs(objective))


@dataclass(frozen=True)
class Row:
    """Sparse range row: lower <= sum(coef[k] * x[idx[k]]) <= upper."""

    idx: tuple[int, ...]
    coef: tuple[float, ...]
    lower: float
    upper: float
    name: str = ""

    def activity(self, x: np.ndarray) -> float:
        return float(np.dot(self.coef, x[list(self.idx)]))


@dataclass
class MilpModel:
    """Linear program with binary integrality marks and range rows."""

    num_vars: int
    objective_sense: str
    objective: np.ndarray
    var_lower: np.ndarray
    var_upper: np.ndarray
    integrality: tuple[str, ...]
    rows: list[Row]
    var_names: tuple[str, ...] = ()
    row_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.objective = np.asarray(self.objective, dtype=float)
        self.var_lower = np.asarray(self.var_lower, dtype=float)
        self.var_upper = np.asarray(self.var_upper, dtype=float)
        if not self.var_names:
            self.var_names = tuple(f"v{i}" for i in range(self.num_vars))
        if not self.row_names:
            self.row_names = tuple(
                r.name or f"r{i}" for i, r in enumerate(self.rows)
            )

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    @property
    def binaries(self) -> np.ndarray:
        """Indices of binary variables, ascending."""
        return np.array(
            [j for j, kind in enumerate(self.integrality) if kind == BINARY],
            dtype=int,
        )

    def dense_rows(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense (m, n) coefficient matrix plus row lower/upper vectors."""
        m = self.num_rows
        a = np.zeros((m, self.num_vars))
        lo = np.empty(m)
        up = np.empty(m)
        for i, r in enumerate(self.rows):
            a[i, list(r.idx)] = r.coef
            lo[i] = r.lower
            up[i] = r.upper
        return a, lo, up


@dataclass
class LpSolution:
    """Result of one continuous LP solve."""

    status: str  # optimal | infeasible | unbounded | iteration_limit
    objective: float
    values: np.ndarray
    dual_values: np.ndarray
    infeasibility: float = 0.0
    iterations: int = 0


@dataclass
class MilpSolution:
    """Result of one MILP solve (branch and bound or enumeration)."""

    status: str  # optimal | feasible_time_limit | infeasible
    objective: float
    best_bound: float
    gap: float
    values: np.ndarray | None
    node_count: int
    wall_time: float
    # diagnostic only: final basis of the root LP, for chained warm starts
    root_basis: object | None = field(default=None, repr=False, compare=False)


def validate(m: MilpModel) -> list[str]:
    """Collect invariant violations; an empty list means the model is ok."""
    bad: list[str] = []
    n = m.num_vars
    for arr, what in (
        (m.objective, "objective"),
        (m.var_lower, "var_lower"),
        (m.var_upper, "var_upper"),
    ):
        if len(arr) != n:
            bad.append(f"{what} has length {len(arr)}, expected {n}")
    if len(m.integrality) != n:
        bad.append(f"integrality has length {len(m.integrality)}, expected {n}")
    if len(m.var_names) != n:
        bad.append(f"var_names has length {len(m.var_names)}, expected {n}")
    if len(m.row_names) != m.num_rows:
        bad.append(
            f"row_names has length {len(m.row_names)}, expected {m.num_rows}"
        )
    if m.objective_sense not in (MINIMIZE, MAXIMIZE):
        bad.append(f"unknown objective sense {m.objective_sense!r}")
    for j in range(min(n, len(m.var_lower), len(m.var_upper))):
        lo, up = m.var_lower[j], m.var_upper[j]
        if lo > up:
            bad.append(f"variable {m.var_names[j]}: lower {lo} > upper {up}")
        if j < len(m.integrality) and m.integrality[j] == BINARY:
            if lo < 0.0 or up > 1.0:
                bad.append(
                    f"binary variable {m.var_names[j]} has bounds "
                    f"[{lo}, {up}] outside [0, 1]"
                )
        elif j < len(m.integrality) and m.integrality[j] != CONTINUOUS:
            bad.append(
                f"variable {m.var_names[j]}: unknown integrality "
                f"{m.integrality[j]!r}"
            )
    for i, r in enumerate(m.rows):
        rname = m.row_names[i] if i < len(m.row_names) else f"r{i}"
        if len(r.idx) != len(r.coef):
            bad.append(f"row {rname}: index/coefficient length mismatch")
            continue
        if len(r.idx) == 0:
            bad.append(f"row {rname}: empty row")
        if any(j < 0 or j >= n for j in r.idx):
            bad.append(f"row {rname}: variable index out of range")
        if len(set(r.idx)) != len(r.idx):
            bad.append(f"row {rname}: duplicate variable index")
        if r.lower > r.upper:
            bad.append(f"row {rname}: lower {r.lower} > upper {r.upper}")
    return bad


def fix_binaries(m: MilpModel, assignment: Mapping[int, float]) -> MilpModel:
    """Pin binary variables to 0/1 and relax their integrality.

    Keys must index binary variables of ``m``; anything else raises
    :class:`UnknownVariableError`.  The input model is left untouched.
    """
    lower = m.var_lower.copy()
    upper = m.var_upper.copy()
    kinds = list(m.integrality)
    for j, val in assignment.items():
        if j < 0 or j >= m.num_vars or m.integrality[j] != BINARY:
            raise UnknownVariableError(
                f"variable index {j} is not a binary variable of the model"
            )
        v = float(val)
        if v not in (0.0, 1.0):
            raise ValueError(f"binary assignment must be 0 or 1, got {val}")
        lower[j] = v
        upper[j] = v
        kinds[j] = CONTINUOUS
    return replace(
        m, var_lower=lower, var_upper=upper, integrality=tuple(kinds)
    )


def _cardinality_row(m: MilpModel, binaries: np.ndarray) -> int | None:
    """Return the target count p of a pure cardinality row, if one exists.

    Such a row has support exactly equal to the binary variables, all
    coefficients 1, and equal integral bounds.
    """
    bin_set = set(int(j) for j in binaries)
    for r in m.rows:
        if set(r.idx) != bin_set:
            continue
        if any(c != 1.0 for c in r.coef):
            continue
        if r.lower != r.upper:
            continue
        p = r.lower
        if p == int(p) and 0 <= int(p) <= len(bin_set):
            return int(p)
    return None


def brute_force_milp(
    m: MilpModel,
    lp: Callable[[MilpModel], LpSolution],
    max_binaries: int = 25,
) -> MilpSolution:
    """Enumerate all binary assignments and keep the best LP optimum.

    Independent of the branch-and-bound engine; used as the MILP oracle.
    When the model carries a pure cardinality row over the binaries,
    enumeration is restricted to assignments with exactly that many ones.
    """
    t0 = time.perf_counter()
    binaries = m.binaries
    k = len(binaries)
    if k > max_binaries:
        raise TooManyBinariesError(
            f"{k} binary variables exceed the enumeration cap {max_binaries}"
        )
    maximize = m.objective_sense == MAXIMIZE

    if k == 0:
        patterns: Iterable[tuple[int, ...]] = [()]
    else:
        p = _cardinality_row(m, binaries)
        if p is not None:
            ones = itertools.combinations(range(k), p)
            patterns = (
                tuple(1 if i in set(chosen) else 0 for i in range(k))
                for chosen in ones
            )
        else:
            patterns = itertools.product((0, 1), repeat=k)

    best_obj = -math.inf if maximize else math.inf
    best_values: np.ndarray | None = None
    solved = 0
    for pattern in patterns:
        assignment = {int(binaries[i]): pattern[i] for i in range(k)}
        sol = lp(fix_binaries(m, assignment))
        solved += 1
        if sol.status != "optimal":
            continue
        better = sol.objective > best_obj if maximize else sol.objective < best_obj
        if best_values is None or better:
            best_obj = sol.objective
            best_values = sol.values.copy()
            for i in range(k):
                best_values[binaries[i]] = float(pattern[i])

    wall = time.perf_counter() - t0
    if best_values is None:
        return MilpSolution(
            status="infeasible",
            objective=math.nan,
            best_bound=math.nan,
            gap=math.inf,
            values=None,
            node_count=solved,
            wall_time=wall,
        )
    return MilpSolution(
        status="optimal",
        objective=best_obj,
        best_bound=best_obj,
        gap=0.0,
        values=best_values,
        node_count=solved,
        wall_time=wall,
    )


# ---------------------------------------------------------------------------
# text serialization (line oriented, byte-stable round trip)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    # repr() is the shortest exact round-trip form; normalize -0.0
    return repr(float(x) + 0.0)


def serialize(m: MilpModel) -> str:
    """Render a model in the line-oriented debug format.

    The format is ``sense``, one ``v`` line per variable
    (index name lower upper integrality) and one ``r`` line per row
    (index name lower upper ``:`` idx/coef pairs).  Floats use ``repr`` so
    serialize -> parse -> serialize is byte-identical.
    """
    for name in itertools.chain(m.var_names, m.row_names):
        if any(ch.isspace() for ch in name):
            raise SerializationError(f"name {name!r} contains whitespace")
    out = ["milp 1", f"sense {m.objective_sense}", f"vars {m.num_vars}"]
    for j in range(m.num_vars):
        out.append(
            f"v {j} {m.var_names[j]} {_fmt(m.objective[j])} "
            f"{_fmt(m.var_lower[j])} {_fmt(m.var_upper[j])} {m.integrality[j]}"
        )
    out.append(f"rows {m.num_rows}")
    for i, r in enumerate(m.rows):
        pairs = " ".join(f"{j} {_fmt(c)}" for j, c in zip(r.idx, r.coef))
        out.append(
            f"r {i} {m.row_names[i]} {_fmt(r.lower)} {_fmt(r.upper)} : {pairs}"
        )
    out.append("end")
    return "\n".join(out) + "\n"


def parse(text: str) -> MilpModel:
    """Inverse of :func:`serialize`."""
    lines = text.splitlines()
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise SerializationError("unexpected end of model text")
        line = lines[pos]
        pos += 1
        return line

    if take() != "milp 1":
        raise SerializationError("missing 'milp 1' header")
    sense_line = take().split()
    if len(sense_line) != 2 or sense_line[0] != "sense":
        raise SerializationError("missing sense line")
    sense = sense_line[1]
    head = take().split()
    if len(head) != 2 or head[0] != "vars":
        raise SerializationError("missing vars line")
    n = int(head[1])
    obj = np.zeros(n)
    lo = np.zeros(n)
    up = np.zeros(n)
    kinds: list[str] = []
    names: list[str] = []
    for j in range(n):
        parts = take().split()
        if len(parts) != 7 or parts[0] != "v" or int(parts[1]) != j:
            raise SerializationError(f"malformed variable line {j}")
        names.append(parts[2])
        obj[j] = float(parts[3])
        lo[j] = float(parts[4])
        up[j] = float(parts[5])
        kinds.append(parts[6])
    head = take().split()
    if len(head) != 2 or head[0] != "rows":
        raise SerializationError("missing rows line")
    m_rows = int(head[1])
    rows: list[Row] = []
    row_names: list[str] = []
    for i in range(m_rows):
        parts = take().split()
        if len(parts) < 6 or parts[0] != "r" or int(parts[1]) != i or parts[5] != ":":
            raise SerializationError(f"malformed row line {i}")
        row_names.append(parts[2])
        lower = float(parts[3])
        upper = float(parts[4])
        tail = parts[6:]
        if len(tail) % 2 != 0:
            raise SerializationError(f"row {i}: odd sparse pair list")
        idx = tuple(int(tail[k]) for k in range(0, len(tail), 2))
        coef = tuple(float(tail[k]) for k in range(1, len(tail), 2))
        rows.append(Row(idx, coef, lower, upper, row_names[-1]))
    if take() != "end":
        raise SerializationError("missing 'end' line")
    return MilpModel(
        num_vars=n,
        objective_sense=sense,
        objective=obj,
        var_lower=lo,
        var_upper=up,
        integrality=tuple(kinds),
        rows=rows,
        var_names=tuple(names),
        row_names=tuple(row_names),
    )
