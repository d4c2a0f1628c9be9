"""Rolling-window evaluation: in-sample solve, out-of-sample measurement.

Windows advance by the out-of-sample length (rebalancing period equals the
holding period); the final truncated window is kept.  Out-of-sample
accounting holds the solved weights fixed within each window, so the weekly
portfolio return is the weight-average of that week's asset returns; weight
drift is deliberately not modeled, which matters when comparing Av/Sh values
against share-count buy-and-hold implementations.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .branch_bound import BnbOptions, solve_milp
from .formulations import (
    InfeasibleAtMu0Error,
    ModelConfig,
    Portfolio,
    build_cvar_cc,
    build_pure_cvar,
    build_unified,
    compute_bounds_detail,
    extract_portfolio,
    portfolio_from_weights,
    portfolio_to_json,
    unified_assignment,
)
from .market_data import (
    LOGARITHMIC,
    SIMPLE,
    PricePanel,
    ReturnPanel,
    TooFewObservationsError,
    correlation_distances,
    log_returns,
    scenario_set,
    simple_returns,
)
from .model_ir import MilpSolution, fix_binaries

STRATEGIES = ("unified", "cvar_cc", "pure_cvar", "index")


class ZeroVarianceError(ValueError):
    """Sharpe ratio is undefined on a constant return series."""


class TooShortError(ValueError):
    pass


class EmptyError(ValueError):
    pass


@dataclass
class BacktestConfig:
    model_cfg: ModelConfig
    in_len: int = 104
    out_len: int = 52
    strategy: str = "unified"
    solver_opts: BnbOptions = field(default_factory=BnbOptions)
    infeasible_policy: str = "abort"  # or "pure_cvar"
    threads: int = 1


@dataclass
class WindowRecord:
    """One in-sample solve and the bookkeeping around it."""

    window: tuple[int, int, int]  # (in_start, in_end, out_end) return rows
    portfolio: Portfolio | None
    objective: float
    gap: float
    nodes: int
    wall_time: float
    mu0: float


@dataclass
class BacktestReport:
    strategy: str
    gamma: float | None
    p: int
    windows: list[WindowRecord]
    oos_returns: np.ndarray
    av: float
    sharpe: float | None
    avg_time: float
    avg_gap: float
    avg_nodes: float
    n_problems: int
    model_cfg: ModelConfig | None = None


# ---------------------------------------------------------------------------
# protocol shape
# ---------------------------------------------------------------------------

def make_windows(
    total_obs: int, in_len: int, out_len: int
) -> list[tuple[int, int, int]]:
    """Rolling windows over return rows, advancing by ``out_len``.

    The k-th window trains on rows [k*out_len, k*out_len + in_len) and is
    measured on the following ``out_len`` rows (truncated at the end of the
    data); windows whose out-of-sample part would be empty are dropped.
    """
    if in_len < 2 or out_len < 1:
        raise ValueError("need in_len >= 2 and out_len >= 1")
    if total_obs < in_len + 1:
        raise TooFewObservationsError(
            f"{total_obs} observations cannot host an in-sample window of "
            f"{in_len} plus one out-of-sample row"
        )
    windows = []
    k = 0
    while k * out_len + in_len < total_obs:
        in_start = k * out_len
        in_end = in_start + in_len
        windows.append((in_start, in_end, min(in_end + out_len, total_obs)))
        k += 1
    return windows


# ---------------------------------------------------------------------------
# performance measures
# ---------------------------------------------------------------------------

def average_return(oos: Sequence[float]) -> float:
    arr = np.asarray(oos, dtype=float)
    if arr.size == 0:
        raise EmptyError("empty return series")
    return float(arr.mean())


def sharpe_ratio(oos: Sequence[float], rf: float = 0.0) -> float:
    """Mean excess return over sample (length-1) standard deviation."""
    arr = np.asarray(oos, dtype=float)
    if arr.size < 2:
        raise TooShortError("need at least two returns")
    sd = float(arr.std(ddof=1))
    if sd <= 0.0:
        raise ZeroVarianceError("zero return variance; Sharpe is undefined")
    return (float(arr.mean()) - rf) / sd


def _sharpe_or_none(oos: np.ndarray) -> float | None:
    try:
        return sharpe_ratio(oos)
    except (ZeroVarianceError, TooShortError):
        return None


# ---------------------------------------------------------------------------
# window solving
# ---------------------------------------------------------------------------

def _window_data(panel: PricePanel, win: tuple[int, int, int]):
    """In-sample scenario set and distances, plus out-of-sample returns."""
    in_start, in_end, out_end = win
    rs = simple_returns(panel).returns
    rl = log_returns(panel).returns
    s = scenario_set(
        ReturnPanel(rs[in_start:in_end], SIMPLE, panel.asset_ids)
    )
    d = correlation_distances(
        ReturnPanel(rl[in_start:in_end], LOGARITHMIC, panel.asset_ids)
    )
    return s, d, rs[in_end:out_end]


def _solve_window(
    panel: PricePanel, cfg: BacktestConfig, win: tuple[int, int, int]
) -> tuple[WindowRecord, np.ndarray]:
    s, d, oos = _window_data(panel, win)
    mcfg = cfg.model_cfg
    mu0 = mcfg.resolve_mu0(s)
    strategy = cfg.strategy

    if strategy == "index":
        rec = WindowRecord(win, None, math.nan, 0.0, 0, 0.0, mu0)
        return rec, oos.mean(axis=1)

    def run(kind: str) -> tuple[Portfolio, MilpSolution]:
        if kind == "pure_cvar":
            sol = solve_milp(build_pure_cvar(s, mcfg), cfg.solver_opts)
            if sol.status == "infeasible":
                raise InfeasibleAtMu0Error(
                    "no portfolio meets the expected-return floor"
                )
            return portfolio_from_weights(sol.values[: s.n], s, d, mcfg), sol
        if kind == "cvar_cc":
            sol = solve_milp(build_cvar_cc(s, mcfg), cfg.solver_opts)
            if sol.status == "infeasible":
                raise InfeasibleAtMu0Error(
                    "no portfolio meets the expected-return floor"
                )
            return extract_portfolio(sol, s, d, mcfg), sol
        if kind == "unified":
            bounds, _, _ = compute_bounds_detail(
                s, d, mcfg, lambda m: solve_milp(m, cfg.solver_opts)
            )
            sol = solve_milp(
                build_unified(s, d, mcfg, bounds.fp0), cfg.solver_opts
            )
            if sol.status == "infeasible":
                raise InfeasibleAtMu0Error(
                    "no portfolio meets the expected-return floor"
                )
            return extract_portfolio(sol, s, d, mcfg), sol
        raise ValueError(f"unknown strategy {strategy!r}")

    try:
        pf, sol = run(strategy)
    except InfeasibleAtMu0Error:
        if cfg.infeasible_policy != "pure_cvar" or strategy == "pure_cvar":
            raise
        pf, sol = run("pure_cvar")

    rec = WindowRecord(
        win, pf, sol.objective, sol.gap, sol.node_count, sol.wall_time, mu0
    )
    return rec, oos @ pf.weights


def run_backtest(panel: PricePanel, cfg: BacktestConfig) -> BacktestReport:
    """Solve the configured strategy on every window and aggregate."""
    if cfg.strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {cfg.strategy!r}")
    if panel.num_returns < cfg.in_len + 1:
        raise TooFewObservationsError(
            "panel too short for the in-sample window"
        )
    windows = make_windows(panel.num_returns, cfg.in_len, cfg.out_len)
    if cfg.threads > 1 and cfg.strategy != "index":
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(
                pool.map(lambda w: _solve_window(panel, cfg, w), windows)
            )
    else:
        results = [_solve_window(panel, cfg, w) for w in windows]
    records = [rec for rec, _ in results]
    oos = np.concatenate([piece for _, piece in results])
    return _aggregate(cfg, records, oos)


def _aggregate(
    cfg: BacktestConfig, records: list[WindowRecord], oos: np.ndarray
) -> BacktestReport:
    gamma = cfg.model_cfg.gamma if cfg.strategy == "unified" else None
    gaps = [r.gap for r in records if r.portfolio is not None]
    times = [r.wall_time for r in records if r.portfolio is not None]
    nodes = [r.nodes for r in records if r.portfolio is not None]
    return BacktestReport(
        strategy=cfg.strategy,
        gamma=gamma,
        p=cfg.model_cfg.p,
        windows=records,
        oos_returns=oos,
        av=average_return(oos),
        sharpe=_sharpe_or_none(oos),
        avg_time=float(np.mean(times)) if times else 0.0,
        avg_gap=float(np.mean(gaps)) if gaps else 0.0,
        avg_nodes=float(np.mean(nodes)) if nodes else 0.0,
        n_problems=len(records),
        model_cfg=cfg.model_cfg,
    )


# ---------------------------------------------------------------------------
# gamma sweep with chained warm starts
# ---------------------------------------------------------------------------

def gamma_sweep(
    panel: PricePanel, cfg: BacktestConfig, gammas: Sequence[float]
) -> dict[float, BacktestReport]:
    """Chained solves per window, strongest clustering first.

    Per window the chain starts from the two-step shortcut (solve the
    clustering problem, pin its picks, allocate with one LP), whose solution
    seeds branch and bound at the largest requested gamma; every following
    gamma is seeded with the previous solution, which stays feasible because
    the clustering budget only widens as gamma falls.  Chained objectives
    match cold solves because every solve is still run to its own
    certificate.
    """
    gam = [float(g) for g in gammas]
    if not gam:
        raise ValueError("need at least one gamma")
    if any(not 0.0 <= g <= 1.0 for g in gam):
        raise ValueError("gammas must lie in [0, 1]")
    if any(a <= b for a, b in zip(gam, gam[1:])):
        raise ValueError("gammas must be strictly descending")
    windows = make_windows(panel.num_returns, cfg.in_len, cfg.out_len)

    def solve_chain(win):
        s, d, oos = _window_data(panel, win)
        mcfg = cfg.model_cfg
        mu0 = mcfg.resolve_mu0(s)
        bounds, pmp_sol, _ = compute_bounds_detail(
            s, d, mcfg, lambda m: solve_milp(m, cfg.solver_opts)
        )
        # two-step seed: pin the clustering picks, allocate with one LP
        n = s.n
        reps = [j for j in range(n) if pmp_sol.values[n + j] > 0.5]
        cc = build_cvar_cc(s, mcfg)
        pinned = fix_binaries(
            cc, {n + j: (1.0 if j in reps else 0.0) for j in range(n)}
        )
        seed_sol = solve_milp(pinned, cfg.solver_opts)
        if seed_sol.status == "infeasible":
            raise InfeasibleAtMu0Error(
                "no portfolio meets the expected-return floor"
            )
        warm = unified_assignment(
            seed_sol.values[:n], reps, s, d, mcfg
        )
        warm_basis = None
        out = {}
        for g in gam:
            fp0 = g * bounds.fp_lower + (1.0 - g) * bounds.fp_upper
            opts = replace(
                cfg.solver_opts, warm_start=warm, warm_basis=warm_basis
            )
            sol = solve_milp(build_unified(s, d, mcfg, fp0), opts)
            if sol.status == "infeasible":
                raise InfeasibleAtMu0Error(
                    "unified model infeasible inside its computed bracket"
                )
            pf = extract_portfolio(sol, s, d, mcfg)
            rec = WindowRecord(
                win, pf, sol.objective, sol.gap, sol.node_count,
                sol.wall_time, mu0,
            )
            out[g] = (rec, oos @ pf.weights)
            warm = sol.values
            warm_basis = sol.root_basis
        return out

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_window = list(pool.map(solve_chain, windows))
    else:
        per_window = [solve_chain(w) for w in windows]

    reports: dict[float, BacktestReport] = {}
    for g in gam:
        records = [pw[g][0] for pw in per_window]
        oos = np.concatenate([pw[g][1] for pw in per_window])
        gcfg = replace(
            cfg, strategy="unified", model_cfg=replace(cfg.model_cfg, gamma=g)
        )
        reports[g] = _aggregate(gcfg, records, oos)
    return reports


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------

def report_to_json(
    report: BacktestReport,
    asset_ids: Sequence[str] | None = None,
    include_timings: bool = True,
) -> dict:
    """Full-detail report dict.

    Wall-clock fields are measurements, not results; drop them with
    ``include_timings=False`` when byte-stable output is required.
    """
    mcfg = report.model_cfg or ModelConfig(p=report.p)
    windows = []
    for rec in report.windows:
        w = {
            "window": list(rec.window),
            "objective": _json_num(rec.objective),
            "gap": _json_num(rec.gap),
            "nodes": rec.nodes,
            "mu0": rec.mu0,
        }
        if include_timings:
            w["wall_time"] = rec.wall_time
        if rec.portfolio is not None:
            w["portfolio"] = portfolio_to_json(
                rec.portfolio, mcfg, asset_ids
            )
            w["portfolio"]["config"]["mu0"] = rec.mu0
        windows.append(w)
    doc = {
        "strategy": report.strategy,
        "gamma": report.gamma,
        "p": report.p,
        "n_problems": report.n_problems,
        "av": report.av,
        "sharpe": report.sharpe,
        "avg_gap": report.avg_gap,
        "avg_nodes": report.avg_nodes,
        "oos_returns": [float(v) for v in report.oos_returns],
        "windows": windows,
    }
    if include_timings:
        doc["avg_time"] = report.avg_time
    return doc


def _json_num(x: float) -> float | None:
    return None if (x is None or not math.isfinite(x)) else float(x)


CSV_HEADER = "strategy,gamma,p,n_problems,av_x1000,sharpe,avg_gap,avg_nodes"


def reports_to_csv(reports: Sequence[BacktestReport]) -> str:
    """One row per (strategy, gamma, p); deterministic, no wall-clock data.

    Av is scaled by 1000 to match the usual tabulation of weekly returns.
    """
    lines = [CSV_HEADER]
    for r in reports:
        gamma = "" if r.gamma is None else repr(float(r.gamma))
        sharpe = "" if r.sharpe is None else repr(float(r.sharpe))
        lines.append(
            f"{r.strategy},{gamma},{r.p},{r.n_problems},"
            f"{repr(r.av * 1000.0)},{sharpe},"
            f"{repr(float(r.avg_gap))},{repr(float(r.avg_nodes))}"
        )
    return "\n".join(lines) + "\n"


def write_report_files(
    out_json: str,
    out_csv: str,
    reports: Sequence[BacktestReport],
    asset_ids: Sequence[str] | None = None,
) -> None:
    with open(out_json, "w", encoding="utf-8") as fh:
        json.dump(
            [report_to_json(r, asset_ids) for r in reports],
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write(reports_to_csv(reports))
