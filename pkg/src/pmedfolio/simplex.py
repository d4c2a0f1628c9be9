"""Bounded-variable two-phase primal simplex over dense matrices.

Range rows ``lo <= a.x <= up`` are rewritten as ``a.x - s = 0`` with the
slack ``s`` bounded by ``[lo, up]``, so the equality right-hand side is
always zero and all data lives in the bounds.  Phase 1 minimizes the total
bound violation of basic variables directly (no artificial columns, no
big-M), which lets a solve restart from any warm basis, including one that
a bound change made infeasible.  The basis inverse is kept explicitly and
updated in product form, with a full refactorization every
``refactor_every`` pivots.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model_ir import MAXIMIZE, LpSolution, MilpModel, validate

logger = logging.getLogger(__name__)

BASIC = 0
AT_LOWER = 1
AT_UPPER = 2
FREE_ZERO = 3

_PIV_TOL = 1e-10       # minimum |pivot| accepted in the ratio test
_DEGEN_STEP = 1e-12    # steps at or below this count as stalling


class NumericalFailureError(RuntimeError):
    """Basis factorization broke down even after a refactorization retry."""


class BadBetaError(ValueError):
    """CVaR tolerance level must lie in (0, 1]."""


@dataclass
class SimplexOptions:
    feas_tol: float = 1e-9
    opt_tol: float = 1e-9
    max_iters: int = 0          # 0 means 50 * (rows + cols)
    bland_threshold: int = 60   # stalled iterations before Bland's rule
    refactor_every: int = 100
    trace: bool = False


@dataclass
class Basis:
    """Restart point: basic column per row plus the nonbasic rest states."""

    basic: np.ndarray           # (m,) column index per row
    nonbasic_state: np.ndarray  # (num_cols,) AT_LOWER/AT_UPPER/FREE_ZERO/BASIC

    def copy(self) -> "Basis":
        return Basis(self.basic.copy(), self.nonbasic_state.copy())


def cvar_primal_oracle(y, probs, beta: float) -> float:
    """Exact tail mean by greedy fill, independent of any LP machinery.

    Sorts scenario returns ascending and assigns each its full probability
    until total mass ``beta`` is reached (fractional last scenario), then
    returns the probability-weighted average of that worst tail.
    """
    if not 0.0 < beta <= 1.0:
        raise BadBetaError(f"beta must be in (0, 1], got {beta}")
    y = np.asarray(y, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if y.shape != probs.shape or y.ndim != 1:
        raise ValueError("returns and probabilities must be equal-length vectors")
    if np.any(probs < -1e-15):
        raise ValueError("negative scenario probability")
    order = np.argsort(y, kind="stable")
    remaining = beta
    total = 0.0
    for t in order:
        take = min(float(probs[t]), remaining)
        total += take * float(y[t])
        remaining -= take
        if remaining <= 0.0:
            break
    if remaining > 1e-9:
        raise ValueError("scenario probabilities sum to less than beta")
    return total / beta


class LpEngine:
    """Reusable solver for one model shape.

    The dense constraint matrix is built once; :meth:`solve` may then be
    called many times with different variable bounds and warm bases, which
    is what branch and bound needs.
    """

    def __init__(self, model: MilpModel, opts: SimplexOptions | None = None):
        bad = validate(model)
        if bad:
            raise ValueError("invalid model: " + "; ".join(bad))
        self.model = model
        self.opts = opts or SimplexOptions()
        m = model.num_rows
        ns = model.num_vars
        a_struct, row_lo, row_up = model.dense_rows()
        self.m = m
        self.ns = ns
        self.num_cols = ns + m
        a = np.zeros((m, self.num_cols))
        a[:, :ns] = a_struct
        if m:
            a[np.arange(m), ns + np.arange(m)] = -1.0
        self.a = a
        self.base_lb = np.concatenate([model.var_lower, row_lo])
        self.base_ub = np.concatenate([model.var_upper, row_up])
        self.mult = -1.0 if model.objective_sense == MAXIMIZE else 1.0
        c = np.zeros(self.num_cols)
        c[:ns] = self.mult * model.objective
        self.c = c

    # -- public -------------------------------------------------------

    def solve(
        self,
        warm: Basis | None = None,
        var_lower: np.ndarray | None = None,
        var_upper: np.ndarray | None = None,
    ) -> tuple[LpSolution, Basis]:
        lb = self.base_lb.copy()
        ub = self.base_ub.copy()
        if var_lower is not None:
            lb[: self.ns] = var_lower
        if var_upper is not None:
            ub[: self.ns] = var_upper
        if np.any(lb > ub):
            raise ValueError("variable lower bound exceeds upper bound")
        return _SimplexRun(self, lb, ub, warm).run()


def solve_lp(
    model: MilpModel,
    opts: SimplexOptions | None = None,
    warm: Basis | None = None,
) -> tuple[LpSolution, Basis]:
    """One-shot LP solve; integrality marks are ignored."""
    return LpEngine(model, opts).solve(warm=warm)


class _SimplexRun:
    """Mutable workspace for a single solve; not shared across threads."""

    def __init__(self, eng: LpEngine, lb, ub, warm: Basis | None):
        self.eng = eng
        self.lb = lb
        self.ub = ub
        self.m = eng.m
        self.n = eng.num_cols
        self.a = eng.a
        self.c = eng.c
        self.opts = eng.opts
        self.x = np.zeros(self.n)
        self.binv = np.zeros((self.m, self.m))
        self.basic = np.zeros(self.m, dtype=np.int64)
        self.state = np.zeros(self.n, dtype=np.int8)
        self.iters = 0
        self._init_basis(warm)

    # -- setup --------------------------------------------------------

    def _cold_state(self) -> None:
        ns = self.eng.ns
        self.basic = ns + np.arange(self.m, dtype=np.int64)
        st = np.empty(self.n, dtype=np.int8)
        st[:] = AT_LOWER
        st[np.isinf(self.lb) & ~np.isinf(self.ub)] = AT_UPPER
        st[np.isinf(self.lb) & np.isinf(self.ub)] = FREE_ZERO
        st[self.basic] = BASIC
        self.state = st

    def _init_basis(self, warm: Basis | None) -> None:
        ok = False
        if warm is not None:
            basic = np.asarray(warm.basic, dtype=np.int64)
            st = np.asarray(warm.nonbasic_state, dtype=np.int8).copy()
            if (
                basic.shape == (self.m,)
                and st.shape == (self.n,)
                and (self.m == 0 or (basic.min() >= 0 and basic.max() < self.n))
                and np.count_nonzero(st == BASIC) == self.m
                and np.all(st[basic] == BASIC)
            ):
                # repair states that new bounds made meaningless
                bad_lo = (st == AT_LOWER) & np.isinf(self.lb)
                st[bad_lo & ~np.isinf(self.ub)] = AT_UPPER
                st[bad_lo & np.isinf(self.ub)] = FREE_ZERO
                bad_up = (st == AT_UPPER) & np.isinf(self.ub)
                st[bad_up & ~np.isinf(self.lb)] = AT_LOWER
                st[bad_up & np.isinf(self.lb)] = FREE_ZERO
                self.basic = basic.copy()
                self.state = st
                ok = True
        if not ok:
            self._cold_state()
        try:
            self._refactor()
        except np.linalg.LinAlgError:
            if warm is None:
                raise NumericalFailureError("singular initial basis")
            self._cold_state()
            self._refactor()

    def _refactor(self) -> None:
        if self.m:
            self.binv = np.linalg.inv(self.a[:, self.basic])
        self._reset_values()

    def _reset_values(self) -> None:
        st = self.state
        x = self.x
        at_lo = st == AT_LOWER
        at_up = st == AT_UPPER
        x[at_lo] = self.lb[at_lo]
        x[at_up] = self.ub[at_up]
        x[st == FREE_ZERO] = 0.0
        if self.m:
            xn = x.copy()
            xn[self.basic] = 0.0
            x[self.basic] = self.binv @ -(self.a @ xn)

    # -- main loop ----------------------------------------------------

    def run(self) -> tuple[LpSolution, Basis]:
        opts = self.opts
        feas_tol = opts.feas_tol
        opt_tol = opts.opt_tol
        max_iters = opts.max_iters or 50 * (self.m + self.n)
        a = self.a
        c = self.c
        lb = self.lb
        ub = self.ub
        x = self.x
        movable = lb < ub
        trace = opts.trace
        bland = False
        stall = 0
        since_refactor = 0
        retried = False
        status = "iteration_limit"
        infeas = 0.0

        while self.iters < max_iters:
            self.iters += 1
            basic = self.basic
            xb = x[basic]
            lbb = lb[basic]
            ubb = ub[basic]
            below = (lbb - xb) > feas_tol
            above = (xb - ubb) > feas_tol
            in_phase1 = bool(below.any() or above.any())
            if in_phase1:
                infeas = float(
                    np.maximum(lbb - xb, 0.0).sum()
                    + np.maximum(xb - ubb, 0.0).sum()
                )
                cb = above.astype(float) - below.astype(float)
                y = self.binv.T @ cb
                d = -(a.T @ y)
            else:
                infeas = 0.0
                cb = c[basic]
                y = self.binv.T @ cb
                d = c - a.T @ y

            st = self.state
            can_in = (st == AT_LOWER) & movable & (d < -opt_tol)
            can_de = (st == AT_UPPER) & movable & (d > opt_tol)
            can_fr = (st == FREE_ZERO) & (np.abs(d) > opt_tol)
            cand = can_in | can_de | can_fr
            if not cand.any():
                status = "infeasible" if in_phase1 else "optimal"
                break

            if bland:
                q = int(np.flatnonzero(cand)[0])
            else:
                score = np.where(cand, np.abs(d), -1.0)
                q = int(np.argmax(score))
            dirn = 1.0 if (can_in[q] or (can_fr[q] and d[q] < 0.0)) else -1.0

            h = self.binv @ a[:, q]
            delta = -dirn * h

            # blocking step per basic variable (phase aware)
            t_arr = np.full(self.m, np.inf)
            pos = delta > _PIV_TOL
            neg = delta < -_PIV_TOL
            sel = pos & ~above
            np.divide(
                np.where(below, lbb, ubb) - xb, delta, out=t_arr, where=sel
            )
            t_arr[sel & ~below & np.isinf(ubb)] = np.inf
            sel = neg & ~below
            t_dec = np.full(self.m, np.inf)
            np.divide(
                np.where(above, ubb, lbb) - xb, delta, out=t_dec, where=sel
            )
            t_dec[sel & ~above & np.isinf(lbb)] = np.inf
            t_arr = np.minimum(t_arr, t_dec)
            np.clip(t_arr, 0.0, None, out=t_arr)

            t_basic = float(t_arr.min()) if self.m else np.inf
            t_own = ub[q] - lb[q]
            t = min(t_basic, t_own)
            if not np.isfinite(t):
                if in_phase1:
                    raise NumericalFailureError(
                        "unblocked improving direction while infeasible"
                    )
                status = "unbounded"
                break

            if trace:
                logger.debug(
                    "it=%d phase=%d enter=%d dir=%+g step=%.3e obj=%.9g inf=%.3e",
                    self.iters, 1 if in_phase1 else 2, q, dirn, t,
                    float(c @ x), infeas,
                )

            tie = 1e-9 * (1.0 + abs(t))
            if t_own <= t_basic + tie and t_own <= t:
                # bound flip: no basis change
                x[basic] += delta * t_own
                self.state[q] = AT_UPPER if dirn > 0 else AT_LOWER
                x[q] = ub[q] if dirn > 0 else lb[q]
                step = t_own
            else:
                cand_rows = np.flatnonzero(t_arr <= t + tie)
                if bland:
                    r = int(cand_rows[np.argmin(basic[cand_rows])])
                else:
                    r = int(cand_rows[np.argmax(np.abs(delta[cand_rows]))])
                hr = h[r]
                if abs(hr) < _PIV_TOL:
                    # retry the whole iteration on fresh factors once
                    if retried:
                        raise NumericalFailureError(
                            "pivot element vanished after refactorization"
                        )
                    self._refactor()
                    since_refactor = 0
                    retried = True
                    self.iters -= 1
                    continue
                retried = False
                leave = int(basic[r])
                x[basic] += delta * t
                x[q] += dirn * t
                # snap the leaving variable onto the bound it hit
                if delta[r] > 0:
                    hit_lower = below[r]
                else:
                    hit_lower = not above[r]
                if hit_lower:
                    x[leave] = lb[leave]
                    self.state[leave] = AT_LOWER
                else:
                    x[leave] = ub[leave]
                    self.state[leave] = AT_UPPER
                basic[r] = q
                self.state[q] = BASIC
                brow = self.binv[r] / hr
                self.binv -= np.outer(h, brow)
                self.binv[r] = brow
                since_refactor += 1
                if since_refactor >= opts.refactor_every:
                    self._refactor()
                    since_refactor = 0
                step = t

            if step <= _DEGEN_STEP:
                stall += 1
                if stall >= opts.bland_threshold:
                    bland = True
            else:
                stall = 0
                bland = False

        return self._finish(status, infeas)

    # -- wrap-up ------------------------------------------------------

    def _finish(self, status: str, infeas: float) -> tuple[LpSolution, Basis]:
        eng = self.eng
        x = self.x
        objective = float(eng.model.objective @ x[: eng.ns])
        if status == "optimal" and self.m:
            y = self.binv.T @ self.c[self.basic]
            duals = eng.mult * y
        else:
            duals = np.zeros(self.m)
        sol = LpSolution(
            status=status,
            objective=objective,
            values=x[: eng.ns].copy(),
            dual_values=duals,
            infeasibility=infeas,
            iterations=self.iters,
        )
        return sol, Basis(self.basic.copy(), self.state.copy())


def check_lp_solution(
    model: MilpModel, sol: LpSolution
) -> tuple[float, float, float]:
    """Re-check an optimal solution; returns residuals.

    Returns ``(primal, dual_sign, complementary)`` where ``primal`` is the
    largest bound/row violation, ``dual_sign`` the largest wrong-signed
    reduced cost at an active variable bound, and ``complementary`` the
    largest |dual| * distance-to-active-bound over rows.
    """
    a, row_lo, row_up = model.dense_rows()
    x = sol.values
    act = a @ x if model.num_rows else np.zeros(0)
    primal = 0.0
    if model.num_vars:
        primal = max(
            primal,
            float(np.max(np.maximum(model.var_lower - x, 0.0), initial=0.0)),
            float(np.max(np.maximum(x - model.var_upper, 0.0), initial=0.0)),
        )
    if model.num_rows:
        primal = max(
            primal,
            float(np.max(np.maximum(row_lo - act, 0.0), initial=0.0)),
            float(np.max(np.maximum(act - row_up, 0.0), initial=0.0)),
        )
    mult = -1.0 if model.objective_sense == MAXIMIZE else 1.0
    y_int = mult * sol.dual_values
    d_int = mult * model.objective - (a.T @ y_int if model.num_rows else 0.0)
    dual_sign = 0.0
    comp = 0.0
    tol_at = 1e-7
    for j in range(model.num_vars):
        lo, up = model.var_lower[j], model.var_upper[j]
        at_lo = x[j] <= lo + tol_at
        at_up = x[j] >= up - tol_at
        if at_lo and not at_up:
            dual_sign = max(dual_sign, -float(d_int[j]) if d_int[j] < 0 else 0.0)
        elif at_up and not at_lo:
            dual_sign = max(dual_sign, float(d_int[j]) if d_int[j] > 0 else 0.0)
        elif not at_lo and not at_up:
            dual_sign = max(dual_sign, abs(float(d_int[j])))
    for i in range(model.num_rows):
        if y_int[i] == 0.0:
            continue
        dist = min(abs(act[i] - row_lo[i]), abs(act[i] - row_up[i]))
        if np.isnan(dist) or np.isinf(dist):
            dist = abs(act[i] - (row_lo[i] if np.isfinite(row_lo[i]) else row_up[i]))
        comp = max(comp, abs(float(y_int[i])) * float(dist))
    return primal, dual_sign, comp
