import numpy as np
import pytest
from conftest import random_lp, random_market_inputs

from rational_simplex import solve_exact

from pmedfolio.model_ir import (
    CONTINUOUS,
    MAXIMIZE,
    MINIMIZE,
    MilpModel,
    Row,
)
from pmedfolio.simplex import (
    BadBetaError,
    Basis,
    LpEngine,
    SimplexOptions,
    check_lp_solution,
    cvar_primal_oracle,
    solve_lp,
)


def cvar_fixed_model(y, probs, beta) -> MilpModel:
    """Tail-risk LP with the portfolio fixed: vars eta, short_t."""
    t_obs = len(y)
    obj = np.concatenate([[1.0], -np.asarray(probs) / beta])
    rows = [
        Row((1 + t, 0), (1.0, -1.0), -float(y[t]), np.inf, f"tail_{t}")
        for t in range(t_obs)
    ]
    lo = np.concatenate([[-np.inf], np.zeros(t_obs)])
    up = np.full(1 + t_obs, np.inf)
    return MilpModel(
        num_vars=1 + t_obs,
        objective_sense=MAXIMIZE,
        objective=obj,
        var_lower=lo,
        var_upper=up,
        integrality=(CONTINUOUS,) * (1 + t_obs),
        rows=rows,
    )


class TestOracle:
    def test_beta_one_is_mean(self):
        y = np.array([-0.1, 0.0, 0.2])
        probs = np.full(3, 1 / 3)
        assert cvar_primal_oracle(y, probs, 1.0) == pytest.approx(
            y.mean(), abs=1e-15
        )

    def test_single_worst_scenario(self):
        y = np.array([-0.1, 0.0, 0.2])
        assert cvar_primal_oracle(y, np.full(3, 1 / 3), 1 / 3) == pytest.approx(
            -0.1, abs=1e-15
        )

    def test_greedy_fill(self):
        # mass 1/3 on each of the two worst scenarios, scaled by 1/beta
        y = np.array([-0.1, 0.0, 0.2])
        assert cvar_primal_oracle(y, np.full(3, 1 / 3), 2 / 3) == pytest.approx(
            -0.05, abs=1e-15
        )

    def test_bad_beta(self):
        with pytest.raises(BadBetaError):
            cvar_primal_oracle([0.1], [1.0], 0.0)
        with pytest.raises(BadBetaError):
            cvar_primal_oracle([0.1], [1.0], 1.5)


class TestBasics:
    def test_bound_constrained(self):
        m = MilpModel(
            1, MAXIMIZE, np.array([1.0]), np.array([0.0]), np.array([1.0]),
            (CONTINUOUS,), [],
        )
        sol, basis = solve_lp(m)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=1e-12)
        assert sol.values[0] == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_edge(self):
        m = MilpModel(
            2, MAXIMIZE, np.ones(2), np.zeros(2), np.full(2, np.inf),
            (CONTINUOUS,) * 2,
            [Row((0, 1), (1.0, 1.0), -np.inf, 1.0, "cap")],
        )
        sol, _ = solve_lp(m)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=1e-12)

    def test_cvar_duality_frozen_example(self):
        y = np.array([-0.1, 0.0, 0.2])
        probs = np.full(3, 1 / 3)
        sol, _ = solve_lp(cvar_fixed_model(y, probs, 2 / 3))
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(-0.05, abs=1e-12)

    def test_infeasible(self):
        m = MilpModel(
            1, MINIMIZE, np.array([1.0]), np.array([0.0]), np.array([1.0]),
            (CONTINUOUS,),
            [Row((0,), (1.0,), 2.0, np.inf, "impossible")],
        )
        sol, _ = solve_lp(m)
        assert sol.status == "infeasible"
        assert sol.infeasibility > 1e-9

    def test_unbounded(self):
        m = MilpModel(
            1, MAXIMIZE, np.array([1.0]), np.array([0.0]),
            np.array([np.inf]), (CONTINUOUS,), [],
        )
        sol, _ = solve_lp(m)
        assert sol.status == "unbounded"

    def test_dual_is_rhs_shadow_price(self):
        # max 3x + 2y st x + y <= 4, x <= 3, y <= 3
        def build(cap):
            return MilpModel(
                2, MAXIMIZE, np.array([3.0, 2.0]), np.zeros(2),
                np.array([3.0, 3.0]), (CONTINUOUS,) * 2,
                [Row((0, 1), (1.0, 1.0), -np.inf, cap, "cap")],
            )

        sol, _ = solve_lp(build(4.0))
        assert sol.status == "optimal"
        eps = 1e-6
        up, _ = solve_lp(build(4.0 + eps))
        fd = (up.objective - sol.objective) / eps
        assert sol.dual_values[0] == pytest.approx(fd, abs=1e-4)


class TestCvarDuality:
    def test_strong_duality_random(self, rng):
        for _ in range(60):
            t_obs = int(rng.integers(1, 51))
            y = rng.normal(0.002, 0.05, size=t_obs)
            probs = rng.random(t_obs) + 0.01
            probs /= probs.sum()
            beta = float(rng.choice([0.05, 0.1, 0.3, 0.5, 0.9, 1.0]))
            sol, _ = solve_lp(cvar_fixed_model(y, probs, beta))
            assert sol.status == "optimal"
            assert sol.objective == pytest.approx(
                cvar_primal_oracle(y, probs, beta), abs=1e-8
            )

    def test_beta_one_exact(self, rng):
        for _ in range(10):
            t_obs = int(rng.integers(2, 40))
            y = rng.normal(0.0, 0.05, size=t_obs)
            probs = np.full(t_obs, 1.0 / t_obs)
            sol, _ = solve_lp(cvar_fixed_model(y, probs, 1.0))
            assert sol.objective == pytest.approx(
                float(probs @ y), abs=1e-12
            )


class TestWarmStart:
    def test_bound_change_resolve_matches_cold(self, rng):
        for _ in range(25):
            m = random_lp(rng, max_rows=12, max_cols=12)
            eng = LpEngine(m)
            sol, basis = eng.solve()
            if sol.status != "optimal":
                continue
            # tighten one finite-bound variable and re-solve warm vs cold
            j = int(rng.integers(0, m.num_vars))
            lo = m.var_lower.copy()
            up = m.var_upper.copy()
            mid = sol.values[j]
            up[j] = mid if np.isfinite(mid) else 1.0
            lo[j] = min(lo[j], up[j])
            warm_sol, _ = eng.solve(warm=basis, var_lower=lo, var_upper=up)
            cold_sol, _ = eng.solve(var_lower=lo, var_upper=up)
            assert warm_sol.status == cold_sol.status
            if cold_sol.status == "optimal":
                assert warm_sol.objective == pytest.approx(
                    cold_sol.objective, abs=1e-9
                )

    def test_warm_restart_same_model(self):
        m = MilpModel(
            2, MAXIMIZE, np.array([3.0, 2.0]), np.zeros(2),
            np.array([3.0, 3.0]), (CONTINUOUS,) * 2,
            [Row((0, 1), (1.0, 1.0), -np.inf, 4.0, "cap")],
        )
        eng = LpEngine(m)
        sol, basis = eng.solve()
        sol2, _ = eng.solve(warm=basis)
        assert sol2.iterations <= 1
        assert sol2.objective == pytest.approx(sol.objective, abs=1e-12)


class TestAgainstExactReference:
    def test_random_lps_match_rational(self, rng):
        statuses = {"optimal": 0, "infeasible": 0, "unbounded": 0}
        for _ in range(120):
            m = random_lp(rng, max_rows=10, max_cols=10)
            sol, _ = solve_lp(m)
            status, exact = solve_exact(m)
            assert sol.status == status, f"model:\n{m}"
            statuses[status] += 1
            if status == "optimal":
                assert sol.objective == pytest.approx(
                    float(exact), abs=1e-9, rel=1e-9
                )
                primal, dual_sign, comp = check_lp_solution(m, sol)
                assert primal <= 1e-7
                assert dual_sign <= 1e-6
                assert comp <= 1e-6
        # the generator must exercise all three statuses
        assert min(statuses.values()) > 0

    def test_larger_random_lps(self, rng):
        for _ in range(25):
            m = random_lp(rng, max_rows=30, max_cols=30)
            sol, _ = solve_lp(m)
            status, exact = solve_exact(m)
            assert sol.status == status
            if status == "optimal":
                assert sol.objective == pytest.approx(
                    float(exact), abs=1e-9, rel=1e-9
                )
