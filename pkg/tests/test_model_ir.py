import numpy as np
import pytest

from pmedfolio.model_ir import (
    BINARY,
    CONTINUOUS,
    MAXIMIZE,
    MINIMIZE,
    MilpModel,
    Row,
    TooManyBinariesError,
    UnknownVariableError,
    brute_force_milp,
    fix_binaries,
    parse,
    serialize,
    validate,
)
from pmedfolio.simplex import solve_lp


def toy_model() -> MilpModel:
    return MilpModel(
        num_vars=3,
        objective_sense=MAXIMIZE,
        objective=np.array([1.0, 2.0, 0.5]),
        var_lower=np.zeros(3),
        var_upper=np.array([1.0, 1.0, np.inf]),
        integrality=(BINARY, BINARY, CONTINUOUS),
        rows=[
            Row((0, 1), (1.0, 1.0), -np.inf, 1.0, "cap"),
            Row((0, 2), (1.0, -1.0), 0.0, 0.0, "link"),
        ],
        var_names=("a", "b", "c"),
    )


class TestValidate:
    def test_well_formed(self):
        assert validate(toy_model()) == []

    def test_binary_bounds(self):
        m = toy_model()
        m.var_upper[0] = 2.0
        bad = validate(m)
        assert any("a" in msg and "[0.0, 2.0]" in msg for msg in bad)

    def test_empty_row(self):
        m = toy_model()
        m.rows.append(Row((), (), 0.0, 1.0, "empty"))
        m.row_names = m.row_names + ("empty",)
        assert any("empty row" in msg for msg in validate(m))

    def test_bad_bounds(self):
        m = toy_model()
        m.var_lower[2] = 5.0
        m.var_upper[2] = 1.0
        assert any("lower" in msg for msg in validate(m))


class TestFixBinaries:
    def test_empty_assignment_is_identity(self):
        m = toy_model()
        m2 = fix_binaries(m, {})
        assert serialize(m2) == serialize(m)

    def test_pin_to_one(self):
        m2 = fix_binaries(toy_model(), {1: 1})
        assert m2.var_lower[1] == 1.0 == m2.var_upper[1]
        assert m2.integrality[1] == CONTINUOUS
        # original untouched
        assert toy_model().integrality[1] == BINARY

    def test_pin_continuous_rejected(self):
        with pytest.raises(UnknownVariableError):
            fix_binaries(toy_model(), {2: 1})

    def test_pinned_solve_never_beats_milp(self, rng):
        m = toy_model()
        lp = lambda mod: solve_lp(mod)[0]
        best = brute_force_milp(m, lp)
        for a in range(2):
            for b in range(2):
                sol = solve_lp(fix_binaries(m, {0: a, 1: b}))[0]
                if sol.status == "optimal":
                    assert sol.objective <= best.objective + 1e-9


class TestBruteForce:
    def test_no_binaries_single_lp(self):
        m = MilpModel(
            num_vars=1,
            objective_sense=MAXIMIZE,
            objective=np.array([1.0]),
            var_lower=np.array([0.0]),
            var_upper=np.array([1.0]),
            integrality=(CONTINUOUS,),
            rows=[Row((0,), (1.0,), -np.inf, 0.5, "cap")],
        )
        sol = brute_force_milp(m, lambda mod: solve_lp(mod)[0])
        assert sol.status == "optimal"
        assert sol.node_count == 1
        assert sol.objective == pytest.approx(0.5, abs=1e-12)

    def test_toy_knapsack(self):
        m = MilpModel(
            num_vars=2,
            objective_sense=MAXIMIZE,
            objective=np.array([1.0, 1.0]),
            var_lower=np.zeros(2),
            var_upper=np.ones(2),
            integrality=(BINARY, BINARY),
            rows=[Row((0, 1), (1.0, 1.0), -np.inf, 1.0, "cap")],
        )
        sol = brute_force_milp(m, lambda mod: solve_lp(mod)[0])
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=1e-12)
        assert sol.gap == 0.0

    def test_cardinality_row_restricts_enumeration(self):
        n = 6
        m = MilpModel(
            num_vars=n,
            objective_sense=MAXIMIZE,
            objective=np.arange(1.0, n + 1.0),
            var_lower=np.zeros(n),
            var_upper=np.ones(n),
            integrality=(BINARY,) * n,
            rows=[Row(tuple(range(n)), (1.0,) * n, 2.0, 2.0, "choose_p")],
        )
        sol = brute_force_milp(m, lambda mod: solve_lp(mod)[0])
        assert sol.node_count == 15  # C(6, 2), not 2**6
        assert sol.objective == pytest.approx(11.0, abs=1e-12)

    def test_too_many_binaries(self):
        n = 26
        m = MilpModel(
            num_vars=n,
            objective_sense=MAXIMIZE,
            objective=np.ones(n),
            var_lower=np.zeros(n),
            var_upper=np.ones(n),
            integrality=(BINARY,) * n,
            rows=[Row((0,), (1.0,), -np.inf, 1.0, "cap")],
        )
        with pytest.raises(TooManyBinariesError):
            brute_force_milp(m, lambda mod: solve_lp(mod)[0])

    def test_infeasible(self):
        m = MilpModel(
            num_vars=1,
            objective_sense=MINIMIZE,
            objective=np.array([1.0]),
            var_lower=np.array([0.0]),
            var_upper=np.array([1.0]),
            integrality=(BINARY,),
            rows=[Row((0,), (1.0,), 2.0, np.inf, "impossible")],
        )
        sol = brute_force_milp(m, lambda mod: solve_lp(mod)[0])
        assert sol.status == "infeasible"


class TestSerialization:
    def test_round_trip_byte_identical(self):
        text = serialize(toy_model())
        again = serialize(parse(text))
        assert text == again

    def test_round_trip_random(self, rng):
        from conftest import random_lp

        for _ in range(20):
            m = random_lp(rng, max_rows=8, max_cols=8)
            text = serialize(m)
            assert serialize(parse(text)) == text

    def test_infinities_survive(self):
        m = toy_model()
        m2 = parse(serialize(m))
        assert m2.var_upper[2] == np.inf
        assert m2.rows[0].lower == -np.inf
