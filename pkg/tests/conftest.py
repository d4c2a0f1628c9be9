"""Shared instance generators for the solver and model tests."""

from __future__ import annotations

import numpy as np
import pytest

from pmedfolio.formulations import (
    ModelConfig,
    build_cvar_cc,
    build_pmedian,
    build_unified,
)
from pmedfolio.market_data import (
    correlation_distances,
    log_returns,
    scenario_set,
    simple_returns,
    synthetic_market,
)
from pmedfolio.model_ir import CONTINUOUS, MAXIMIZE, MINIMIZE, MilpModel, Row


def random_lp(rng: np.random.Generator, max_rows: int = 30, max_cols: int = 30) -> MilpModel:
    """Random integer-data LP with mixed bound and row types."""
    n = int(rng.integers(1, max_cols + 1))
    m = int(rng.integers(1, max_rows + 1))
    lo = np.zeros(n)
    up = np.full(n, np.inf)
    for j in range(n):
        kind = rng.random()
        if kind < 0.55:
            pass  # [0, inf)
        elif kind < 0.75:
            up[j] = float(rng.integers(1, 10))
        elif kind < 0.88:
            lo[j], up[j] = -np.inf, np.inf
        else:
            lo[j] = -float(rng.integers(0, 6))
            up[j] = float(rng.integers(0, 6))
    obj = rng.integers(-9, 10, size=n).astype(float)
    rows = []
    for i in range(m):
        nnz = int(rng.integers(1, min(n, 6) + 1))
        idx = tuple(int(v) for v in sorted(rng.choice(n, size=nnz, replace=False)))
        coef = rng.integers(-9, 10, size=nnz)
        while not np.any(coef):
            coef = rng.integers(-9, 10, size=nnz)
        b = float(rng.integers(-20, 21))
        kind = rng.random()
        if kind < 0.4:
            lo_r, up_r = -np.inf, b
        elif kind < 0.7:
            lo_r, up_r = b, np.inf
        elif kind < 0.85:
            lo_r, up_r = b, b
        else:
            lo_r, up_r = b, b + float(rng.integers(1, 10))
        rows.append(Row(idx, tuple(float(c) for c in coef), lo_r, up_r, f"r{i}"))
    sense = MAXIMIZE if rng.random() < 0.5 else MINIMIZE
    return MilpModel(
        num_vars=n,
        objective_sense=sense,
        objective=obj,
        var_lower=lo,
        var_upper=up,
        integrality=(CONTINUOUS,) * n,
        rows=rows,
    )


def random_market_inputs(rng: np.random.Generator, n: int, t_obs: int):
    """Scenario set and distance matrix from a seeded synthetic panel."""
    n_blocks = int(rng.integers(1, max(2, n // 2) + 1))
    cuts = sorted(rng.choice(np.arange(1, n), size=n_blocks - 1, replace=False)) if n_blocks > 1 else []
    sizes = np.diff([0, *cuts, n]).astype(int).tolist()
    panel = synthetic_market(n, t_obs, sizes, seed=int(rng.integers(0, 2**31)))
    s = scenario_set(simple_returns(panel))
    d = correlation_distances(log_returns(panel))
    return s, d


def random_model_config(rng: np.random.Generator, n: int) -> ModelConfig:
    p = int(rng.integers(1, min(3, n) + 1))
    beta = float(rng.choice([0.05, 0.1, 0.25, 0.5, 1.0]))
    choice = rng.random()
    mu0 = None
    if choice < 0.3:
        mu0 = -1.0  # non-binding floor
    gamma = float(np.round(rng.uniform(0.0, 1.0), 3))
    lower = 0.0 if rng.random() < 0.3 else None  # None -> 1/n
    return ModelConfig(p=p, beta=beta, mu0=mu0, gamma=gamma, lower=lower)


def random_instance(
    rng: np.random.Generator, kind: str, n: int, t_obs: int
) -> tuple[MilpModel, ModelConfig, object, object]:
    """Seeded (model, cfg, scenario set, distances) of the requested kind."""
    s, d = random_market_inputs(rng, n, t_obs)
    cfg = random_model_config(rng, n)
    if kind == "unified":
        fp_max = float(d.d.sum())  # loose budget so instances stay feasible
        fp0 = float(rng.uniform(0.2, 1.0)) * fp_max
        model = build_unified(s, d, cfg, fp0)
    elif kind == "pmedian":
        model = build_pmedian(s, d, cfg)
    elif kind == "cvar_cc":
        model = build_cvar_cc(s, cfg)
    else:
        raise ValueError(kind)
    return model, cfg, s, d


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240801)
