"""Correlation-clustered CVaR portfolio selection in a single MILP.

The library picks p representative assets on the correlation-distance graph
and allocates capital over them by maximizing scenario CVaR, in one mixed
integer linear program solved by the built-in bounded-variable simplex and
branch-and-bound engines.  A rolling-window backtest harness evaluates the
unified strategy against cardinality-constrained CVaR, plain CVaR, and the
equal-weighted index.
"""

from .backtest import (
    BacktestConfig,
    BacktestReport,
    average_return,
    gamma_sweep,
    make_windows,
    reports_to_csv,
    run_backtest,
    sharpe_ratio,
)
from .branch_bound import BnbOptions, branch_variable, solve_milp
from .formulations import (
    FpBounds,
    ModelConfig,
    Portfolio,
    build_cvar_cc,
    build_pmedian,
    build_pure_cvar,
    build_unified,
    compute_bounds,
    evaluate_fp,
    extract_portfolio,
)
from .market_data import (
    DistanceMatrix,
    PricePanel,
    ReturnPanel,
    ScenarioSet,
    correlation_distances,
    load_prices,
    log_returns,
    save_prices,
    scenario_set,
    simple_returns,
    synthetic_market,
)
from .model_ir import (
    LpSolution,
    MilpModel,
    MilpSolution,
    brute_force_milp,
    fix_binaries,
    validate,
)
from .simplex import Basis, LpEngine, SimplexOptions, cvar_primal_oracle, solve_lp

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig",
    "BacktestReport",
    "Basis",
    "BnbOptions",
    "DistanceMatrix",
    "FpBounds",
    "LpEngine",
    "LpSolution",
    "MilpModel",
    "MilpSolution",
    "ModelConfig",
    "Portfolio",
    "PricePanel",
    "ReturnPanel",
    "ScenarioSet",
    "SimplexOptions",
    "average_return",
    "branch_variable",
    "brute_force_milp",
    "build_cvar_cc",
    "build_pmedian",
    "build_pure_cvar",
    "build_unified",
    "compute_bounds",
    "correlation_distances",
    "cvar_primal_oracle",
    "evaluate_fp",
    "extract_portfolio",
    "fix_binaries",
    "gamma_sweep",
    "load_prices",
    "log_returns",
    "make_windows",
    "reports_to_csv",
    "run_backtest",
    "save_prices",
    "scenario_set",
    "sharpe_ratio",
    "simple_returns",
    "solve_lp",
    "solve_milp",
    "synthetic_market",
    "validate",
]
