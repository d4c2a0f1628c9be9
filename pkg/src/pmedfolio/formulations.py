"""Builders for the clustered CVaR portfolio selection models.

Four related programs share one variable vocabulary: portfolio weights
``x_j``, representative picks ``rep_j`` (binary), continuous assignment
variables ``asn_ij`` for i != j, the tail threshold ``eta`` and per-scenario
shortfalls ``short_t``.  The assignment binaries are relaxed to continuous
because an optimal solution always assigns each asset to its nearest open
representative, so only the ``rep_j`` need integrality.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .market_data import DistanceMatrix, ScenarioSet
from .model_ir import (
    BINARY,
    CONTINUOUS,
    MAXIMIZE,
    MINIMIZE,
    MilpModel,
    MilpSolution,
    Row,
)
from .simplex import cvar_primal_oracle


class DimensionMismatchError(ValueError):
    pass


class InfeasibleAtMu0Error(RuntimeError):
    """No portfolio attains the required expected-return floor."""


class EmptySetError(ValueError):
    pass


class FractionalSolutionError(ValueError):
    pass


class ConfigWarning(UserWarning):
    """Configuration is formally valid but very likely infeasible."""


@dataclass(frozen=True)
class ModelConfig:
    """Shared knobs of all model builders.

    ``mu0=None`` resolves to the equal-weighted average of the scenario-set
    asset means; ``lower``/``upper`` default to 1/n and 1.  ``gamma``
    interpolates the clustering budget between its tight lower bound
    (gamma=1, strongest clustering) and its non-binding upper bound
    (gamma=0).
    """

    p: int
    beta: float = 0.05
    mu0: float | None = None
    gamma: float = 1.0
    lower: Sequence[float] | float | None = None
    upper: Sequence[float] | float | None = None

    def resolve_bounds(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        lo = self.lower
        up = self.upper
        if lo is None:
            lo_arr = np.full(n, 1.0 / n)
        elif np.isscalar(lo):
            lo_arr = np.full(n, float(lo))
        else:
            lo_arr = np.asarray(lo, dtype=float)
        if up is None:
            up_arr = np.ones(n)
        elif np.isscalar(up):
            up_arr = np.full(n, float(up))
        else:
            up_arr = np.asarray(up, dtype=float)
        if lo_arr.shape != (n,) or up_arr.shape != (n,):
            raise DimensionMismatchError("stake bounds do not match n assets")
        return lo_arr, up_arr

    def resolve_mu0(self, s: ScenarioSet) -> float:
        return float(np.mean(s.mu)) if self.mu0 is None else float(self.mu0)


def _validate_config(cfg: ModelConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    if not 1 <= cfg.p <= n:
        raise ValueError(f"p={cfg.p} must satisfy 1 <= p <= {n}")
    if not 0.0 < cfg.beta <= 1.0:
        raise ValueError(f"beta={cfg.beta} must lie in (0, 1]")
    if not 0.0 <= cfg.gamma <= 1.0:
        raise ValueError(f"gamma={cfg.gamma} must lie in [0, 1]")
    lo, up = cfg.resolve_bounds(n)
    if np.any(lo < 0.0) or np.any(lo > up) or np.any(up > 1.0):
        raise ValueError("stake bounds must satisfy 0 <= lower <= upper <= 1")
    top_p = np.sort(up)[::-1][: cfg.p]
    if top_p.sum() < 1.0 - 1e-12:
        warnings.warn(
            f"the {cfg.p} largest stake upper bounds sum to {top_p.sum():.6g} "
            "< 1; every cardinality-constrained model will be infeasible",
            ConfigWarning,
        )
    return lo, up


@dataclass(frozen=True)
class FpBounds:
    """Clustering-cost bracket and its interpolated budget."""

    fp_lower: float
    fp_upper: float
    fp0: float


@dataclass
class Portfolio:
    """Solved allocation plus its clustering and risk readings."""

    weights: np.ndarray
    representatives: tuple[int, ...]
    assignment: np.ndarray  # asset index -> representative index
    fp_value: float
    cvar_value: float
    mean_return: float
    eta: float
    shortfalls: np.ndarray


# ---------------------------------------------------------------------------
# variable layout shared by the builders
# ---------------------------------------------------------------------------

def _assign_index(n: int, i: int, j: int) -> int:
    """Column of asn_ij (i != j) after the n weights and n rep picks."""
    return 2 * n + i * (n - 1) + (j if j < i else j - 1)


def _weight_rows(
    s: ScenarioSet, mu0: float, eta_col: int | None, short_base: int | None
) -> list[Row]:
    """Budget row, shortfall definitions (when present), return floor."""
    n = s.n
    t_obs = s.num_scenarios
    rows = [Row(tuple(range(n)), (1.0,) * n, 1.0, 1.0, "invest_all")]
    if eta_col is not None and short_base is not None:
        for t in range(t_obs):
            idx = (short_base + t, eta_col) + tuple(range(n))
            coef = (1.0, -1.0) + tuple(float(r) for r in s.returns[t])
            rows.append(Row(idx, coef, 0.0, np.inf, f"tail_{t}"))
    rows.append(
        Row(
            tuple(range(n)),
            tuple(float(m) for m in s.mu),
            mu0,
            np.inf,
            "ret_floor",
        )
    )
    return rows


def _location_rows(n: int, p: int, lo: np.ndarray, up: np.ndarray) -> list[Row]:
    """Pick-p, one-cluster-each, open-link, and stake-link rows."""
    rows = [
        Row(tuple(range(n, 2 * n)), (1.0,) * n, float(p), float(p), "choose_p")
    ]
    for i in range(n):
        idx = tuple(
            n + i if j == i else _assign_index(n, i, j) for j in range(n)
        )
        rows.append(Row(idx, (1.0,) * n, 1.0, 1.0, f"assign_{i}"))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            rows.append(
                Row(
                    (_assign_index(n, i, j), n + j),
                    (1.0, -1.0),
                    -np.inf,
                    0.0,
                    f"open_{i}_{j}",
                )
            )
    rows.extend(_stake_rows(n, lo, up, rep_base=n))
    return rows


def _stake_rows(
    n: int, lo: np.ndarray, up: np.ndarray, rep_base: int
) -> list[Row]:
    rows = []
    for j in range(n):
        rows.append(
            Row(
                (j, rep_base + j),
                (1.0, -float(lo[j]) + 0.0),
                0.0,
                np.inf,
                f"stake_lo_{j}",
            )
        )
        rows.append(
            Row(
                (j, rep_base + j),
                (1.0, -float(up[j]) + 0.0),
                -np.inf,
                0.0,
                f"stake_hi_{j}",
            )
        )
    return rows


def _cluster_cost_row(n: int, d: DistanceMatrix, fp0: float) -> Row:
    idx = []
    coef = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            idx.append(_assign_index(n, i, j))
            coef.append(float(d.d[i, j]))
    return Row(tuple(idx), tuple(coef), -np.inf, fp0, "cluster_cap")


def _names(
    n: int, t_obs: int, with_assign: bool, with_tail: bool
) -> tuple[str, ...]:
    names = [f"x_{j}" for j in range(n)] + [f"rep_{j}" for j in range(n)]
    if with_assign:
        names += [
            f"asn_{i}_{j}" for i in range(n) for j in range(n) if j != i
        ]
    if with_tail:
        names += ["eta"] + [f"short_{t}" for t in range(t_obs)]
    return tuple(names)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_unified(
    s: ScenarioSet, d: DistanceMatrix, cfg: ModelConfig, fp0: float
) -> MilpModel:
    """Joint clustering / tail-risk program.

    Maximizes the CVaR dual objective subject to the budget, shortfall,
    return-floor, clustering-budget, and location rows.  ``fp0 = inf`` is
    accepted for diagnostics and simply omits the clustering-budget row.
    """
    n = s.n
    if d.n != n:
        raise DimensionMismatchError(
            f"distance matrix is {d.n}x{d.n} but scenarios have {n} assets"
        )
    lo, up = _validate_config(cfg, n)
    t_obs = s.num_scenarios
    n_assign = n * (n - 1)
    eta_col = 2 * n + n_assign
    short_base = eta_col + 1
    num_vars = short_base + t_obs

    obj = np.zeros(num_vars)
    obj[eta_col] = 1.0
    obj[short_base:] = -s.probs / cfg.beta

    var_lower = np.zeros(num_vars)
    var_upper = np.ones(num_vars)
    var_lower[eta_col] = -np.inf
    var_upper[eta_col] = np.inf
    var_upper[short_base:] = np.inf
    integrality = [CONTINUOUS] * num_vars
    for j in range(n, 2 * n):
        integrality[j] = BINARY

    rows = _weight_rows(s, cfg.resolve_mu0(s), eta_col, short_base)
    if np.isfinite(fp0):
        rows.append(_cluster_cost_row(n, d, float(fp0)))
    rows.extend(_location_rows(n, cfg.p, lo, up))

    return MilpModel(
        num_vars=num_vars,
        objective_sense=MAXIMIZE,
        objective=obj,
        var_lower=var_lower,
        var_upper=var_upper,
        integrality=tuple(integrality),
        rows=rows,
        var_names=_names(n, t_obs, with_assign=True, with_tail=True),
        row_names=tuple(r.name for r in rows),
    )


def build_pmedian(
    s: ScenarioSet, d: DistanceMatrix, cfg: ModelConfig
) -> MilpModel:
    """Minimum total correlation distance subject to a viable portfolio."""
    n = s.n
    if d.n != n:
        raise DimensionMismatchError(
            f"distance matrix is {d.n}x{d.n} but scenarios have {n} assets"
        )
    lo, up = _validate_config(cfg, n)
    n_assign = n * (n - 1)
    num_vars = 2 * n + n_assign

    obj = np.zeros(num_vars)
    for i in range(n):
        for j in range(n):
            if i != j:
                obj[_assign_index(n, i, j)] = float(d.d[i, j])

    var_lower = np.zeros(num_vars)
    var_upper = np.ones(num_vars)
    integrality = [CONTINUOUS] * num_vars
    for j in range(n, 2 * n):
        integrality[j] = BINARY

    rows = _weight_rows(s, cfg.resolve_mu0(s), None, None)
    rows.extend(_location_rows(n, cfg.p, lo, up))

    return MilpModel(
        num_vars=num_vars,
        objective_sense=MINIMIZE,
        objective=obj,
        var_lower=var_lower,
        var_upper=var_upper,
        integrality=tuple(integrality),
        rows=rows,
        var_names=_names(n, 0, with_assign=True, with_tail=False),
        row_names=tuple(r.name for r in rows),
    )


def build_cvar_cc(s: ScenarioSet, cfg: ModelConfig) -> MilpModel:
    """Cardinality-constrained tail-risk program: no distance data."""
    n = s.n
    lo, up = _validate_config(cfg, n)
    t_obs = s.num_scenarios
    eta_col = 2 * n
    short_base = eta_col + 1
    num_vars = short_base + t_obs

    obj = np.zeros(num_vars)
    obj[eta_col] = 1.0
    obj[short_base:] = -s.probs / cfg.beta

    var_lower = np.zeros(num_vars)
    var_upper = np.ones(num_vars)
    var_lower[eta_col] = -np.inf
    var_upper[eta_col] = np.inf
    var_upper[short_base:] = np.inf
    integrality = [CONTINUOUS] * num_vars
    for j in range(n, 2 * n):
        integrality[j] = BINARY

    rows = _weight_rows(s, cfg.resolve_mu0(s), eta_col, short_base)
    rows.append(
        Row(
            tuple(range(n, 2 * n)),
            (1.0,) * n,
            float(cfg.p),
            float(cfg.p),
            "choose_p",
        )
    )
    rows.extend(_stake_rows(n, lo, up, rep_base=n))

    return MilpModel(
        num_vars=num_vars,
        objective_sense=MAXIMIZE,
        objective=obj,
        var_lower=var_lower,
        var_upper=var_upper,
        integrality=tuple(integrality),
        rows=rows,
        var_names=_names(n, t_obs, with_assign=False, with_tail=True),
        row_names=tuple(r.name for r in rows),
    )


def build_pure_cvar(s: ScenarioSet, cfg: ModelConfig) -> MilpModel:
    """Plain tail-risk LP over the budget simplex; no binaries, p ignored."""
    n = s.n
    if not 0.0 < cfg.beta <= 1.0:
        raise ValueError(f"beta={cfg.beta} must lie in (0, 1]")
    t_obs = s.num_scenarios
    eta_col = n
    short_base = n + 1
    num_vars = short_base + t_obs

    obj = np.zeros(num_vars)
    obj[eta_col] = 1.0
    obj[short_base:] = -s.probs / cfg.beta

    var_lower = np.zeros(num_vars)
    var_upper = np.ones(num_vars)
    var_lower[eta_col] = -np.inf
    var_upper[eta_col] = np.inf
    var_upper[short_base:] = np.inf

    rows = _weight_rows(s, cfg.resolve_mu0(s), eta_col, short_base)
    names = tuple(
        [f"x_{j}" for j in range(n)]
        + ["eta"]
        + [f"short_{t}" for t in range(t_obs)]
    )
    return MilpModel(
        num_vars=num_vars,
        objective_sense=MAXIMIZE,
        objective=obj,
        var_lower=var_lower,
        var_upper=var_upper,
        integrality=tuple([CONTINUOUS] * num_vars),
        rows=rows,
        var_names=names,
        row_names=tuple(r.name for r in rows),
    )


# ---------------------------------------------------------------------------
# clustering-cost evaluation and budget bracket
# ---------------------------------------------------------------------------

def evaluate_fp(reps: Iterable[int], d: DistanceMatrix) -> float:
    """Sum over assets of the distance to the nearest representative."""
    idx = sorted(set(int(j) for j in reps))
    if not idx:
        raise EmptySetError("representative set is empty")
    if idx[0] < 0 or idx[-1] >= d.n:
        raise ValueError("representative index out of range")
    return float(d.d[:, idx].min(axis=1).sum())


def compute_bounds_detail(
    s: ScenarioSet,
    d: DistanceMatrix,
    cfg: ModelConfig,
    milp_solver: Callable[[MilpModel], MilpSolution],
) -> tuple[FpBounds, MilpSolution, MilpSolution]:
    """Bracket the clustering budget; also return the two solves.

    The lower endpoint is the least clustering cost any viable portfolio can
    achieve; the upper endpoint is the cost of the representative set an
    unconstrained-by-distance cardinality solve picks, beyond which the
    budget row stops binding.
    """
    pmp_sol = milp_solver(build_pmedian(s, d, cfg))
    if pmp_sol.status == "infeasible":
        raise InfeasibleAtMu0Error(
            "no portfolio meets the expected-return floor"
        )
    cc_sol = milp_solver(build_cvar_cc(s, cfg))
    if cc_sol.status == "infeasible":
        raise InfeasibleAtMu0Error(
            "no portfolio meets the expected-return floor"
        )
    n = s.n
    reps = [j for j in range(n) if cc_sol.values[n + j] > 0.5]
    fp_lower = float(pmp_sol.objective)
    fp_upper = float(evaluate_fp(reps, d))
    fp0 = cfg.gamma * fp_lower + (1.0 - cfg.gamma) * fp_upper
    return FpBounds(fp_lower, fp_upper, fp0), pmp_sol, cc_sol


def compute_bounds(
    s: ScenarioSet,
    d: DistanceMatrix,
    cfg: ModelConfig,
    milp_solver: Callable[[MilpModel], MilpSolution],
) -> FpBounds:
    bounds, _, _ = compute_bounds_detail(s, d, cfg, milp_solver)
    return bounds


# ---------------------------------------------------------------------------
# portfolio extraction
# ---------------------------------------------------------------------------

def tail_threshold(y, probs, beta: float) -> float:
    """Return level below which the worst ``beta`` probability mass falls."""
    y = np.asarray(y, dtype=float)
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(y, kind="stable")
    cum = 0.0
    for t in order:
        cum += float(probs[t])
        if cum >= beta - 1e-12:
            return float(y[t])
    return float(y[order[-1]])


def nearest_assignment(reps: Sequence[int], d: DistanceMatrix) -> np.ndarray:
    """Map every asset to its nearest representative, ties to lowest index."""
    idx = sorted(set(int(j) for j in reps))
    if not idx:
        raise EmptySetError("representative set is empty")
    cols = d.d[:, idx]
    return np.asarray(idx, dtype=int)[np.argmin(cols, axis=1)]


def extract_portfolio(
    sol: MilpSolution,
    s: ScenarioSet,
    d: DistanceMatrix,
    cfg: ModelConfig,
) -> Portfolio:
    """Read a solved model with rep picks back into portfolio terms.

    The cluster assignment, clustering cost, tail statistics and mean are
    recomputed from the data rather than read off possibly degenerate
    assignment values.  Expects the builder layout (weights first, then rep
    picks); the solution must be integral in the rep picks.
    """
    if sol.values is None:
        raise FractionalSolutionError("solution carries no values")
    n = s.n
    x = np.asarray(sol.values[:n], dtype=float)
    z = np.asarray(sol.values[n : 2 * n], dtype=float)
    if np.any(np.abs(z - np.round(z)) > 1e-6):
        raise FractionalSolutionError("representative picks are fractional")
    reps = tuple(int(j) for j in range(n) if z[j] > 0.5)
    if len(reps) != cfg.p:
        raise FractionalSolutionError(
            f"{len(reps)} representatives selected, expected p={cfg.p}"
        )
    assignment = nearest_assignment(reps, d)
    y = s.returns @ x
    eta = tail_threshold(y, s.probs, cfg.beta)
    return Portfolio(
        weights=x,
        representatives=reps,
        assignment=assignment,
        fp_value=evaluate_fp(reps, d),
        cvar_value=cvar_primal_oracle(y, s.probs, cfg.beta),
        mean_return=float(s.mu @ x),
        eta=eta,
        shortfalls=np.maximum(eta - y, 0.0),
    )


def portfolio_from_weights(
    x: np.ndarray, s: ScenarioSet, d: DistanceMatrix, cfg: ModelConfig
) -> Portfolio:
    """Portfolio record for models without rep picks (support = reps)."""
    x = np.asarray(x, dtype=float)
    reps = tuple(int(j) for j in range(s.n) if x[j] > 1e-8)
    assignment = nearest_assignment(reps, d)
    y = s.returns @ x
    eta = tail_threshold(y, s.probs, cfg.beta)
    return Portfolio(
        weights=x,
        representatives=reps,
        assignment=assignment,
        fp_value=evaluate_fp(reps, d),
        cvar_value=cvar_primal_oracle(y, s.probs, cfg.beta),
        mean_return=float(s.mu @ x),
        eta=eta,
        shortfalls=np.maximum(eta - y, 0.0),
    )


def unified_assignment(
    x: np.ndarray,
    reps: Sequence[int],
    s: ScenarioSet,
    d: DistanceMatrix,
    cfg: ModelConfig,
) -> np.ndarray:
    """Assemble a full feasible variable vector for the unified layout.

    Used to seed branch and bound with a solution obtained elsewhere, e.g.
    the two-step shortcut (cluster first, then allocate on the fixed picks).
    """
    n = s.n
    t_obs = s.num_scenarios
    num_vars = 2 * n + n * (n - 1) + 1 + t_obs
    vals = np.zeros(num_vars)
    vals[:n] = x
    rep_set = sorted(set(int(j) for j in reps))
    for j in rep_set:
        vals[n + j] = 1.0
    assignment = nearest_assignment(rep_set, d)
    for i in range(n):
        if i in rep_set:
            continue
        vals[_assign_index(n, i, int(assignment[i]))] = 1.0
    y = s.returns @ np.asarray(x, dtype=float)
    eta = tail_threshold(y, s.probs, cfg.beta)
    vals[2 * n + n * (n - 1)] = eta
    vals[2 * n + n * (n - 1) + 1 :] = np.maximum(eta - y, 0.0)
    return vals


def portfolio_to_json(
    pf: Portfolio,
    cfg: ModelConfig,
    asset_ids: Sequence[str] | None = None,
    extra: Mapping[str, object] | None = None,
) -> dict:
    """JSON-ready dict: weights, picks, assignment, readings, config echo."""
    n = len(pf.weights)
    ids = list(asset_ids) if asset_ids is not None else [f"A{j}" for j in range(n)]
    doc = {
        "weights": {ids[j]: float(pf.weights[j]) for j in range(n)},
        "representatives": [ids[j] for j in pf.representatives],
        "assignment": {
            ids[i]: ids[int(pf.assignment[i])] for i in range(n)
        },
        "fp_value": pf.fp_value,
        "cvar_value": pf.cvar_value,
        "mean_return": pf.mean_return,
        "eta": pf.eta,
        "shortfalls": [float(v) for v in pf.shortfalls],
        "config": {
            "p": cfg.p,
            "beta": cfg.beta,
            "mu0": cfg.mu0,
            "gamma": cfg.gamma,
        },
    }
    if extra:
        doc.update(extra)
    return doc


def write_portfolio_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
