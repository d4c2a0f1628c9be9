"""Branch and bound over binary variables with LP-relaxation bounds.

Node order is best-first (largest LP bound) with depth-first plunging until
the first incumbent; branching pins a binary's bounds to 0/1 so the LP keeps
its dimensions and every child can warm start from the parent basis.  The
initial plunge ignores the time limit so a timed-out solve can still hand
back an incumbent whenever one exists.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model_ir import (
    MAXIMIZE,
    MilpModel,
    MilpSolution,
    relative_gap,
    validate,
)
from .simplex import Basis, LpEngine, SimplexOptions

_PRUNE_TOL = 1e-9


class InfeasibleWarmStartWarning(UserWarning):
    """The supplied warm start violates the model; it was discarded."""


class SolverFailureError(RuntimeError):
    """An LP relaxation returned a status branch and bound cannot use."""


@dataclass
class BnbOptions:
    time_limit: float = 7200.0
    rel_gap_tol: float = 1e-6
    int_tol: float = 1e-6
    node_limit: int = 0  # 0 means unbounded
    branching: str = "most_fractional"  # "pseudo_cost" reserved, unimplemented
    warm_start: Sequence[float] | np.ndarray | None = None
    warm_basis: Basis | None = None  # root LP restart hint (chained sweeps)
    simplex: SimplexOptions = field(default_factory=SimplexOptions)


@dataclass
class Node:
    """Open subproblem: bound pins along the root-to-node path."""

    bound_changes: tuple[tuple[int, float], ...]
    parent_objective: float  # LP bound inherited, in maximization space
    depth: int
    basis: Basis | None = None


def branch_variable(
    lp_values: np.ndarray, binaries: Sequence[int], int_tol: float
) -> int | None:
    """Binary index with fractional part closest to 0.5 (ties: lowest index).

    Returns None when every binary is within ``int_tol`` of 0 or 1.
    """
    best = None
    best_score = math.inf
    for j in binaries:
        v = float(lp_values[j])
        if abs(v - round(v)) <= int_tol:
            continue
        score = abs(v - 0.5)
        if score < best_score:
            best_score = score
            best = int(j)
    return best


def _feasible_assignment(
    model: MilpModel,
    values: np.ndarray,
    binaries: np.ndarray,
    int_tol: float,
    feas_tol: float = 1e-7,
) -> np.ndarray | None:
    """Round binaries and accept the point only if the model holds."""
    if values.shape != (model.num_vars,):
        return None
    x = values.astype(float).copy()
    for j in binaries:
        if abs(x[j] - round(x[j])) > int_tol:
            return None
        x[j] = float(round(x[j]))
    if np.any(x < model.var_lower - feas_tol) or np.any(
        x > model.var_upper + feas_tol
    ):
        return None
    for r in model.rows:
        act = r.activity(x)
        if act < r.lower - feas_tol or act > r.upper + feas_tol:
            return None
    return x


def solve_milp(
    model: MilpModel,
    opts: BnbOptions | None = None,
    progress: Callable[[float, float, float, float, int], None] | None = None,
) -> MilpSolution:
    """Solve a binary MILP to proven optimality, a gap, or a time limit.

    ``progress``, when given, is called at least once per second of solving
    with ``(elapsed_seconds, incumbent, bound, gap, nodes)``.
    """
    opts = opts or BnbOptions()
    bad = validate(model)
    if bad:
        raise ValueError("invalid model: " + "; ".join(bad))
    t0 = time.perf_counter()
    maximize = model.objective_sense == MAXIMIZE
    smult = 1.0 if maximize else -1.0  # to maximization space
    engine = LpEngine(model, opts.simplex)
    binaries = model.binaries
    base_lb = model.var_lower
    base_ub = model.var_upper

    inc_obj: float | None = None  # maximization space
    inc_values: np.ndarray | None = None
    if opts.warm_start is not None:
        xw = _feasible_assignment(
            model, np.asarray(opts.warm_start, dtype=float), binaries,
            opts.int_tol,
        )
        if xw is None:
            warnings.warn(
                "warm start is infeasible for the model and was discarded",
                InfeasibleWarmStartWarning,
            )
        else:
            inc_obj = smult * float(model.objective @ xw)
            inc_values = xw

    counter = itertools.count()
    heap: list[tuple[float, int, Node]] = []
    dive: Node | None = Node((), math.inf, 0, opts.warm_basis)
    node_count = 0
    root_basis: Basis | None = None
    last_cb = t0
    stopped = False

    def open_bound() -> float:
        """Largest bound among unexplored nodes (maximization space)."""
        best = -math.inf
        if heap:
            best = -heap[0][0]
        if dive is not None:
            best = max(best, dive.parent_objective)
        return best

    def global_bound() -> float:
        b = open_bound()
        if inc_obj is not None:
            b = max(b, inc_obj)
        return b

    def report(final: bool = False) -> None:
        nonlocal last_cb
        if progress is None:
            return
        now = time.perf_counter()
        if not final and now - last_cb < 1.0:
            return
        last_cb = now
        bb = global_bound()
        inc_ext = math.nan if inc_obj is None else smult * inc_obj
        bb_ext = smult * bb if math.isfinite(bb) else smult * bb
        gap = math.inf if inc_obj is None else relative_gap(bb, inc_obj)
        progress(now - t0, inc_ext, bb_ext, gap, node_count)

    while True:
        if dive is not None:
            node = dive
            dive = None
        elif heap:
            node = heapq.heappop(heap)[2]
        else:
            break
        if inc_obj is not None and node.parent_objective <= inc_obj + _PRUNE_TOL:
            continue
        # limits: the root always runs; the first plunge ignores the clock
        if node_count > 0:
            if (
                inc_obj is not None
                and time.perf_counter() - t0 >= opts.time_limit
            ):
                heapq.heappush(
                    heap, (-node.parent_objective, next(counter), node)
                )
                stopped = True
                break
            if opts.node_limit and node_count >= opts.node_limit:
                heapq.heappush(
                    heap, (-node.parent_objective, next(counter), node)
                )
                stopped = True
                break
        if node.bound_changes:
            lo = base_lb.copy()
            up = base_ub.copy()
            for j, v in node.bound_changes:
                lo[j] = v
                up[j] = v
        else:
            lo = base_lb
            up = base_ub
        sol, basis = engine.solve(warm=node.basis, var_lower=lo, var_upper=up)
        node_count += 1
        if node.depth == 0 and not node.bound_changes:
            root_basis = basis
        report()
        if sol.status == "infeasible":
            continue
        if sol.status != "optimal":
            raise SolverFailureError(
                f"node LP finished with status {sol.status!r}"
            )
        bound = min(smult * sol.objective, node.parent_objective)
        if inc_obj is not None and bound <= inc_obj + _PRUNE_TOL:
            continue
        frac = branch_variable(sol.values, binaries, opts.int_tol)
        if frac is None:
            vals = sol.values.copy()
            if len(binaries):
                vals[binaries] = np.round(vals[binaries])
            if inc_obj is None or bound > inc_obj:
                inc_obj = bound
                inc_values = vals
            if inc_obj is not None and relative_gap(
                max(global_bound(), inc_obj), inc_obj
            ) <= opts.rel_gap_tol:
                stopped = False
                heap.clear()
                break
            continue
        v = float(sol.values[frac])
        first_val = 1.0 if v >= 0.5 else 0.0
        near = Node(
            node.bound_changes + ((frac, first_val),),
            bound,
            node.depth + 1,
            basis,
        )
        far = Node(
            node.bound_changes + ((frac, 1.0 - first_val),),
            bound,
            node.depth + 1,
            basis,
        )
        heapq.heappush(heap, (-far.parent_objective, next(counter), far))
        if inc_obj is None:
            dive = near
        else:
            heapq.heappush(heap, (-near.parent_objective, next(counter), near))

    wall = time.perf_counter() - t0
    report(final=True)
    if inc_obj is None:
        if stopped:
            # timed out while proving anything exists; see decisions notes
            return MilpSolution(
                status="feasible_time_limit",
                objective=-smult * math.inf,
                best_bound=smult * open_bound(),
                gap=math.inf,
                values=None,
                node_count=node_count,
                wall_time=wall,
                root_basis=root_basis,
            )
        return MilpSolution(
            status="infeasible",
            objective=math.nan,
            best_bound=math.nan,
            gap=math.inf,
            values=None,
            node_count=node_count,
            wall_time=wall,
            root_basis=root_basis,
        )
    objective = smult * inc_obj
    if stopped:
        bb = max(global_bound(), inc_obj)
        return MilpSolution(
            status="feasible_time_limit",
            objective=objective,
            best_bound=smult * bb,
            gap=relative_gap(bb, inc_obj),
            values=inc_values,
            node_count=node_count,
            wall_time=wall,
            root_basis=root_basis,
        )
    # optimal: certified by the exhausted queue or the gap tolerance
    return MilpSolution(
        status="optimal",
        objective=objective,
        best_bound=objective,
        gap=0.0,
        values=inc_values,
        node_count=node_count,
        wall_time=wall,
        root_basis=root_basis,
    )
