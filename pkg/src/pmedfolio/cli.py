"""Batch front end: data inspection, single solves, backtests, comparisons.

Configuration comes from an optional JSON document plus flag overrides
(flags win).  Exit codes are a stable contract: 0 success, 2 input error,
3 infeasible, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from typing import Sequence

import numpy as np

from .backtest import (
    BacktestConfig,
    BacktestReport,
    gamma_sweep,
    reports_to_csv,
    run_backtest,
    write_report_files,
)
from .branch_bound import BnbOptions, SolverFailureError, solve_milp
from .formulations import (
    InfeasibleAtMu0Error,
    ModelConfig,
    build_cvar_cc,
    build_pure_cvar,
    build_unified,
    compute_bounds_detail,
    extract_portfolio,
    portfolio_from_weights,
    portfolio_to_json,
    write_portfolio_json,
)
from .market_data import (
    BadBlockSpecError,
    MalformedCsvError,
    NonPositivePriceError,
    PricePanel,
    TooFewObservationsError,
    WrongReturnKindError,
    correlation_distances,
    load_prices,
    log_returns,
    save_prices,
    scenario_set,
    simple_returns,
    synthetic_market,
)
from .simplex import NumericalFailureError


class ConfigError(ValueError):
    """Malformed run configuration (unknown keys, bad types)."""


_TOP_KEYS = {"prices", "synthetic", "out", "seed", "threads", "model",
             "backtest", "solver"}
_MODEL_KEYS = {"p", "beta", "mu0", "gamma", "lower", "upper"}
_BACKTEST_KEYS = {"in_len", "out_len", "strategy", "gammas", "ps",
                  "infeasible_policy"}
_SOLVER_KEYS = {"time_limit", "rel_gap_tol", "int_tol", "node_limit"}
_SYNTHETIC_KEYS = {"n", "periods", "blocks", "seed"}


def _default_config() -> dict:
    return {
        "prices": None,
        "synthetic": None,
        "out": ".",
        "seed": 0,
        "threads": 1,
        "model": {"p": 5, "beta": 0.05, "mu0": "index", "gamma": 0.5,
                  "lower": None, "upper": None},
        "backtest": {"in_len": 104, "out_len": 52, "strategy": "unified",
                     "gammas": None, "ps": None,
                     "infeasible_policy": "abort"},
        "solver": {"time_limit": 7200.0, "rel_gap_tol": 1e-6,
                   "int_tol": 1e-6, "node_limit": 0},
    }


def _check_keys(doc: dict, allowed: set, where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(
            f"unknown {where} keys: {', '.join(sorted(unknown))}"
        )


def load_config(path: str | None) -> dict:
    cfg = _default_config()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "config")
    for section, keys in (
        ("model", _MODEL_KEYS),
        ("backtest", _BACKTEST_KEYS),
        ("solver", _SOLVER_KEYS),
        ("synthetic", _SYNTHETIC_KEYS),
    ):
        sub = doc.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        _check_keys(sub, keys, section)
        if section == "synthetic":
            cfg[section] = {**sub}
        else:
            cfg[section].update(sub)
    for key in ("prices", "out", "seed", "threads"):
        if key in doc:
            cfg[key] = doc[key]
    return cfg


def _apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    if getattr(args, "prices", None):
        cfg["prices"] = args.prices
    if getattr(args, "out", None):
        cfg["out"] = args.out
    for key in ("seed", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "p", None):
        ps = _int_list(args.p, "--p")
        cfg["model"]["p"] = ps[0]
        cfg["backtest"]["ps"] = ps
    if getattr(args, "gamma", None):
        gs = _float_list(args.gamma, "--gamma")
        cfg["model"]["gamma"] = gs[0]
        cfg["backtest"]["gammas"] = gs
    if getattr(args, "beta", None) is not None:
        cfg["model"]["beta"] = args.beta
    if getattr(args, "mu0", None) is not None:
        cfg["model"]["mu0"] = args.mu0
    if getattr(args, "in_len", None) is not None:
        cfg["backtest"]["in_len"] = args.in_len
    if getattr(args, "out_len", None) is not None:
        cfg["backtest"]["out_len"] = args.out_len
    if getattr(args, "strategy", None):
        cfg["backtest"]["strategy"] = args.strategy
    if getattr(args, "time_limit", None) is not None:
        cfg["solver"]["time_limit"] = args.time_limit
    return cfg


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(tok) for tok in str(text).split(",") if tok != ""]
    except ValueError:
        raise ConfigError(f"{flag} expects an integer or comma list") from None


def _float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in str(text).split(",") if tok != ""]
    except ValueError:
        raise ConfigError(f"{flag} expects a float or comma list") from None


def _model_config(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    mu0 = m.get("mu0", "index")
    if isinstance(mu0, str):
        if mu0 != "index":
            raise ConfigError("mu0 must be a number or the string 'index'")
        mu0_val = None
    else:
        mu0_val = None if mu0 is None else float(mu0)
    return ModelConfig(
        p=int(m["p"]),
        beta=float(m["beta"]),
        mu0=mu0_val,
        gamma=float(m["gamma"]),
        lower=m.get("lower"),
        upper=m.get("upper"),
    )


def _solver_options(cfg: dict) -> BnbOptions:
    s = cfg["solver"]
    return BnbOptions(
        time_limit=float(s["time_limit"]),
        rel_gap_tol=float(s["rel_gap_tol"]),
        int_tol=float(s["int_tol"]),
        node_limit=int(s["node_limit"]),
    )


def _load_panel(cfg: dict) -> PricePanel:
    if cfg.get("prices"):
        return load_prices(cfg["prices"])
    syn = cfg.get("synthetic")
    if syn:
        _check_keys(syn, _SYNTHETIC_KEYS, "synthetic")
        return synthetic_market(
            int(syn["n"]),
            int(syn["periods"]),
            [int(b) for b in syn["blocks"]],
            int(syn.get("seed", cfg.get("seed", 0))),
        )
    raise ConfigError("no input data: set 'prices' or 'synthetic'")


def _outdir(cfg: dict) -> str:
    out = cfg.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _g(x: float) -> str:
    return format(x, ".6g")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_info(args: argparse.Namespace) -> int:
    panel = load_prices(args.prices)
    rp = simple_returns(panel)
    print(f"assets     : {panel.n}")
    print(f"returns    : {rp.num_obs}")
    print(f"date range : {panel.dates[0]} .. {panel.dates[-1]}")
    print("asset      mean        std         min         max")
    mean = rp.returns.mean(axis=0)
    sd = rp.returns.std(axis=0, ddof=1) if rp.num_obs > 1 else np.zeros(panel.n)
    for j, aid in enumerate(panel.asset_ids):
        print(
            f"{aid:<10} {_g(mean[j]):>11} {_g(sd[j]):>11} "
            f"{_g(rp.returns[:, j].min()):>11} {_g(rp.returns[:, j].max()):>11}"
        )
    if panel.n >= 2 and rp.num_obs >= 2:
        d = correlation_distances(log_returns(panel))
        off = d.rho[~np.eye(panel.n, dtype=bool)]
        print(f"pairwise correlation: min {_g(off.min())}, max {_g(off.max())}")
    else:
        print("pairwise correlation: n/a")
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    blocks = _int_list(args.blocks, "--blocks")
    panel = synthetic_market(args.n, args.periods, blocks, args.seed)
    save_prices(panel, args.out)
    print(
        f"wrote {panel.n} assets x {len(panel.dates)} prices to {args.out} "
        f"(blocks {blocks}, seed {args.seed})"
    )
    return 0


def _slice_panel(panel: PricePanel, in_len: int | None) -> PricePanel:
    if in_len is None or panel.num_returns <= in_len:
        return panel
    rows = in_len + 1
    return PricePanel(
        panel.dates[-rows:], panel.prices[-rows:], panel.asset_ids
    )


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    mcfg = _model_config(cfg)
    opts = _solver_options(cfg)
    panel = _load_panel(cfg)
    panel = _slice_panel(panel, args.in_len)
    s = scenario_set(simple_returns(panel))
    d = correlation_distances(log_returns(panel))
    strategy = args.strategy or "unified"
    out = _outdir(cfg)

    extra: dict = {"strategy": strategy, "mu0_resolved": mcfg.resolve_mu0(s)}
    if strategy == "pure_cvar":
        sol = solve_milp(build_pure_cvar(s, mcfg), opts)
        if sol.status == "infeasible":
            raise InfeasibleAtMu0Error("expected-return floor unattainable")
        pf = portfolio_from_weights(sol.values[: s.n], s, d, mcfg)
    elif strategy == "cvar_cc":
        sol = solve_milp(build_cvar_cc(s, mcfg), opts)
        if sol.status == "infeasible":
            raise InfeasibleAtMu0Error("expected-return floor unattainable")
        pf = extract_portfolio(sol, s, d, mcfg)
    else:
        bounds, _, _ = compute_bounds_detail(
            s, d, mcfg, lambda m: solve_milp(m, opts)
        )
        sol = solve_milp(build_unified(s, d, mcfg, bounds.fp0), opts)
        if sol.status == "infeasible":
            raise InfeasibleAtMu0Error("expected-return floor unattainable")
        pf = extract_portfolio(sol, s, d, mcfg)
        extra["fp_bounds"] = {
            "fp_lower": bounds.fp_lower,
            "fp_upper": bounds.fp_upper,
            "fp0": bounds.fp0,
        }
        print(
            f"clustering cost bracket: lower {_g(bounds.fp_lower)}, "
            f"upper {_g(bounds.fp_upper)}, budget {_g(bounds.fp0)}"
        )

    extra["status"] = sol.status
    extra["gap"] = sol.gap
    extra["nodes"] = sol.node_count
    doc = portfolio_to_json(pf, mcfg, panel.asset_ids, extra)
    path = os.path.join(out, "portfolio.json")
    write_portfolio_json(path, doc)

    reps = ", ".join(panel.asset_ids[j] for j in pf.representatives)
    print(f"status         : {sol.status}")
    print(f"representatives: {reps}")
    for j in range(s.n):
        if pf.weights[j] >= 1e-6:
            print(f"  {panel.asset_ids[j]:<10} {_g(pf.weights[j])}")
    print(f"cvar           : {_g(pf.cvar_value)}")
    print(f"mean return    : {_g(pf.mean_return)}")
    print(f"time           : {_g(sol.wall_time)} s")
    print(f"gap            : {_g(sol.gap)}")
    print(f"wrote {path}")
    return 0


def _backtest_reports(
    panel: PricePanel, cfg: dict, strategy: str
) -> list[BacktestReport]:
    mcfg = _model_config(cfg)
    opts = _solver_options(cfg)
    bt = cfg["backtest"]
    ps = bt.get("ps") or [mcfg.p]
    gammas = bt.get("gammas")
    reports: list[BacktestReport] = []
    for p in ps:
        pcfg = replace(mcfg, p=int(p))
        bcfg = BacktestConfig(
            model_cfg=pcfg,
            in_len=int(bt["in_len"]),
            out_len=int(bt["out_len"]),
            strategy=strategy,
            solver_opts=opts,
            infeasible_policy=bt.get("infeasible_policy", "abort"),
            threads=int(cfg.get("threads", 1)),
        )
        if strategy == "unified" and gammas:
            desc = sorted({float(g) for g in gammas}, reverse=True)
            sweep = gamma_sweep(panel, bcfg, desc)
            for g in sorted(sweep):
                reports.append(sweep[g])
        else:
            reports.append(run_backtest(panel, bcfg))
    return reports


def cmd_backtest(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    panel = _load_panel(cfg)
    strategy = cfg["backtest"]["strategy"]
    reports = _backtest_reports(panel, cfg, strategy)
    out = _outdir(cfg)
    json_path = os.path.join(out, "report.json")
    csv_path = os.path.join(out, "report.csv")
    write_report_files(json_path, csv_path, reports, panel.asset_ids)
    print("strategy     gamma   p   Av*1e3      Sh        time      gap")
    for r in reports:
        gamma = "" if r.gamma is None else _g(r.gamma)
        sh = "n/a" if r.sharpe is None else _g(r.sharpe)
        print(
            f"{r.strategy:<12} {gamma:>5} {r.p:>3} {_g(r.av * 1e3):>9} "
            f"{sh:>9} {_g(r.avg_time):>9} {_g(r.avg_gap):>9}"
        )
    print(f"wrote {json_path} and {csv_path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    panel = _load_panel(cfg)
    strategies = [
        s.strip() for s in (args.strategies or
                            "unified,cvar_cc,pure_cvar,index").split(",")
        if s.strip()
    ]
    bt = cfg["backtest"]
    if not bt.get("gammas"):
        bt["gammas"] = [round(0.1 * k, 1) for k in range(1, 11)]
    rows: list[tuple[int, BacktestReport]] = []
    ps = bt.get("ps") or [cfg["model"]["p"]]
    for strategy in strategies:
        sub = dict(cfg)
        for rep in _backtest_reports(panel, sub, strategy):
            rows.append((rep.p, rep))
    out = _outdir(cfg)
    path = os.path.join(out, "compare.csv")
    csv_text = _compare_csv(rows, ps, strategies)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    sys.stdout.write(csv_text)
    print(f"wrote {path}")
    return 0


def _compare_csv(
    rows: list[tuple[int, BacktestReport]],
    ps: Sequence[int],
    strategies: Sequence[str],
) -> str:
    """Combined table with the outperformance and best-value flags.

    ``beats_all`` marks a clustered row whose Av and Sh both strictly beat
    every benchmark strategy at the same p; ``best_av``/``best_sh`` mark the
    per-p column maxima (first achiever in row order wins ties, i.e. the
    lowest gamma).
    """
    benches = [s for s in strategies if s != "unified"]
    lines = [
        "p,strategy,gamma,n_problems,av_x1000,sharpe,avg_gap,avg_nodes,"
        "beats_all,best_av,best_sh"
    ]
    for p in ps:
        group = [r for (rp, r) in rows if rp == p]
        # row order: unified by ascending gamma, then the benchmarks
        group.sort(
            key=lambda r: (
                0 if r.strategy == "unified" else
                1 + benches.index(r.strategy),
                r.gamma if r.gamma is not None else math.inf,
            )
        )
        bench_av = [r.av for r in group if r.strategy != "unified"]
        bench_sh = [
            r.sharpe for r in group
            if r.strategy != "unified" and r.sharpe is not None
        ]
        avs = [r.av for r in group]
        shs = [r.sharpe for r in group if r.sharpe is not None]
        best_av = max(avs) if avs else math.nan
        best_sh = max(shs) if shs else math.nan
        seen_av = False
        seen_sh = False
        for r in group:
            if r.strategy == "unified" and bench_av and bench_sh:
                beats = (
                    r.av > max(bench_av)
                    and r.sharpe is not None
                    and r.sharpe > max(bench_sh)
                )
                italic = "yes" if beats else "no"
            else:
                italic = ""
            is_best_av = (not seen_av) and avs and r.av == best_av
            if is_best_av:
                seen_av = True
            is_best_sh = (
                (not seen_sh) and r.sharpe is not None and r.sharpe == best_sh
            )
            if is_best_sh:
                seen_sh = True
            gamma = "" if r.gamma is None else repr(float(r.gamma))
            sharpe = "" if r.sharpe is None else repr(float(r.sharpe))
            lines.append(
                f"{p},{r.strategy},{gamma},{r.n_problems},"
                f"{repr(r.av * 1000.0)},{sharpe},"
                f"{repr(float(r.avg_gap))},{repr(float(r.avg_nodes))},"
                f"{italic},{'yes' if is_best_av else 'no'},"
                f"{'yes' if is_best_sh else 'no'}"
            )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--prices", help="price CSV path")
    p.add_argument("--p", help="representative count (INT or comma list)")
    p.add_argument("--gamma", help="clustering strength (FLOAT or comma list)")
    p.add_argument("--beta", type=float, help="CVaR tail level in (0, 1]")
    p.add_argument("--mu0", help="return floor: FLOAT or 'index'")
    p.add_argument("--in-len", dest="in_len", type=int,
                   help="in-sample window length (weeks)")
    p.add_argument("--out-len", dest="out_len", type=int,
                   help="out-of-sample window length (weeks)")
    p.add_argument("--time-limit", dest="time_limit", type=float,
                   help="solver time limit in seconds")
    p.add_argument("--seed", type=int, help="seed for synthetic data")
    p.add_argument("--threads", type=int,
                   help="worker cap; 1 guarantees bit-reproducibility")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmedfolio",
        description="clustered CVaR portfolio selection and backtesting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_info = sub.add_parser("info", help="summarize a price CSV")
    p_info.add_argument("--prices", required=True)
    p_info.set_defaults(func=cmd_info)

    p_solve = sub.add_parser("solve", help="solve one in-sample instance")
    _add_common(p_solve)
    p_solve.add_argument(
        "--strategy", choices=("unified", "cvar_cc", "pure_cvar"),
        help="model to solve (default unified)",
    )
    p_solve.set_defaults(func=cmd_solve)

    p_back = sub.add_parser("backtest", help="rolling-window evaluation")
    _add_common(p_back)
    p_back.add_argument(
        "--strategy", choices=("unified", "cvar_cc", "pure_cvar", "index"),
        help="strategy to evaluate",
    )
    p_back.set_defaults(func=cmd_backtest)

    p_cmp = sub.add_parser("compare", help="strategy comparison table")
    _add_common(p_cmp)
    p_cmp.add_argument(
        "--strategies",
        help="comma list among unified,cvar_cc,pure_cvar,index",
    )
    p_cmp.set_defaults(func=cmd_compare)

    p_gen = sub.add_parser("gen", help="write a synthetic market CSV")
    p_gen.add_argument("--n", type=int, required=True, help="asset count")
    p_gen.add_argument("--periods", type=int, required=True,
                       help="number of return observations")
    p_gen.add_argument("--blocks", required=True,
                       help="comma list of block sizes summing to n")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output CSV path")
    p_gen.set_defaults(func=cmd_gen)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleAtMu0Error as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except (NumericalFailureError, SolverFailureError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 4
    except (
        FileNotFoundError,
        MalformedCsvError,
        NonPositivePriceError,
        BadBlockSpecError,
        TooFewObservationsError,
        WrongReturnKindError,
        ConfigError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
