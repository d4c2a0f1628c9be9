"""Exact-arithmetic LP reference used only by the test suite.

Deliberately different from the production engine: variables are shifted or
split to be nonnegative, bounds become explicit rows, and a classic textbook
two-phase tableau simplex with artificial columns and Bland's rule runs over
``fractions.Fraction``.  Slow but exact; keeps the float solver honest.
"""

from __future__ import annotations

from fractions import Fraction

from pmedfolio.model_ir import MAXIMIZE, MilpModel


def _to_fraction(x: float) -> Fraction:
    # Fraction(float) is exact; only ever called on finite values
    return Fraction(float(x))


def solve_exact(model: MilpModel) -> tuple[str, Fraction | None]:
    """Return ``(status, objective)`` with status in optimal/infeasible/unbounded."""
    n = model.num_vars
    mult = -1 if model.objective_sense == MAXIMIZE else 1
    c_orig = [mult * _to_fraction(v) for v in model.objective]

    # variable transform: per original var, terms as (col, sign) plus shift
    # x_j = shift_j + sum(sign * x'_col); every x'_col >= 0
    terms: list[list[tuple[int, int]]] = []
    shifts: list[Fraction] = []
    extra_rows: list[tuple[dict[int, Fraction], str, Fraction]] = []
    ncols = 0
    for j in range(n):
        lo = model.var_lower[j]
        up = model.var_upper[j]
        if lo == -float("inf") and up == float("inf"):
            terms.append([(ncols, 1), (ncols + 1, -1)])
            shifts.append(Fraction(0))
            ncols += 2
        elif lo == -float("inf"):
            # x = up - x''
            terms.append([(ncols, -1)])
            shifts.append(_to_fraction(up))
            ncols += 1
        else:
            terms.append([(ncols, 1)])
            shifts.append(_to_fraction(lo))
            if up != float("inf"):
                extra_rows.append(
                    ({ncols: Fraction(1)}, "<=", _to_fraction(up) - _to_fraction(lo))
                )
            ncols += 1

    def transform(coeffs: dict[int, Fraction]) -> tuple[dict[int, Fraction], Fraction]:
        out: dict[int, Fraction] = {}
        const = Fraction(0)
        for j, a in coeffs.items():
            const += a * shifts[j]
            for col, sign in terms[j]:
                out[col] = out.get(col, Fraction(0)) + a * sign
        return out, const

    rows: list[tuple[dict[int, Fraction], str, Fraction]] = []
    for r in model.rows:
        coeffs = {int(j): _to_fraction(c) for j, c in zip(r.idx, r.coef)}
        tr, const = transform(coeffs)
        lo = r.lower
        up = r.upper
        if lo == up:
            rows.append((tr, "=", _to_fraction(lo) - const))
            continue
        if up != float("inf"):
            rows.append((tr, "<=", _to_fraction(up) - const))
        if lo != -float("inf"):
            rows.append((tr, ">=", _to_fraction(lo) - const))
    rows.extend(extra_rows)

    obj_coeffs = {j: c_orig[j] for j in range(n) if c_orig[j] != 0}
    c_tr, c_const = transform(obj_coeffs)
    cvec = [c_tr.get(col, Fraction(0)) for col in range(ncols)]

    status, val = _standard_two_phase(ncols, cvec, rows)
    if status != "optimal":
        return status, None
    return "optimal", mult * (val + c_const)


def _standard_two_phase(
    ncols: int,
    cvec: list[Fraction],
    rows: list[tuple[dict[int, Fraction], str, Fraction]],
) -> tuple[str, Fraction | None]:
    """min cvec.x over x >= 0 and the given <=/==/>= rows (Bland's rule)."""
    m = len(rows)
    # normalize rhs >= 0, then add slacks/artificials
    norm = []
    for coeffs, sense, b in rows:
        if b < 0:
            coeffs = {j: -a for j, a in coeffs.items()}
            b = -b
            sense = {"<=": ">=", ">=": "<=", "=": "="}[sense]
        norm.append((coeffs, sense, b))
    n_slack = sum(1 for _, s, _ in norm if s in ("<=", ">="))
    total = ncols + n_slack + m  # one artificial per row is simplest
    tab = [[Fraction(0)] * (total + 1) for _ in range(m)]
    basis = [0] * m
    scol = ncols
    acol = ncols + n_slack
    art_cols = set()
    for i, (coeffs, sense, b) in enumerate(norm):
        for j, a in coeffs.items():
            tab[i][j] = a
        if sense == "<=":
            tab[i][scol] = Fraction(1)
            basis[i] = scol
            scol += 1
            tab[i][acol] = Fraction(0)
        elif sense == ">=":
            tab[i][scol] = Fraction(-1)
            scol += 1
            tab[i][acol] = Fraction(1)
            basis[i] = acol
            art_cols.add(acol)
        else:
            tab[i][acol] = Fraction(1)
            basis[i] = acol
            art_cols.add(acol)
        if sense == "<=":
            pass
        acol += 1
        tab[i][total] = b
    # artificial columns for "<=" rows exist but stay zero; never enter
    forbidden = set(range(ncols + n_slack, total)) - art_cols

    def pivot(r: int, q: int) -> None:
        piv = tab[r][q]
        tab[r] = [v / piv for v in tab[r]]
        for i in range(m):
            if i != r and tab[i][q] != 0:
                f = tab[i][q]
                tab[i] = [a - f * b for a, b in zip(tab[i], tab[r])]
        basis[r] = q

    def reduced_costs(cost: list[Fraction]) -> list[Fraction]:
        red = list(cost)
        for i in range(m):
            cb = cost[basis[i]]
            if cb != 0:
                for j in range(total):
                    red[j] -= cb * tab[i][j]
        return red

    def objective(cost: list[Fraction]) -> Fraction:
        return sum(cost[basis[i]] * tab[i][total] for i in range(m))

    def run(cost: list[Fraction], banned: set[int]) -> str:
        while True:
            red = reduced_costs(cost)
            q = -1
            for j in range(total):
                if j in banned:
                    continue
                if red[j] < 0:
                    q = j
                    break
            if q < 0:
                return "optimal"
            r = -1
            best = None
            for i in range(m):
                if tab[i][q] > 0:
                    ratio = tab[i][total] / tab[i][q]
                    if best is None or ratio < best or (
                        ratio == best and basis[i] < basis[r]
                    ):
                        best = ratio
                        r = i
            if r < 0:
                return "unbounded"
            pivot(r, q)

    phase1_cost = [Fraction(0)] * total
    for j in art_cols:
        phase1_cost[j] = Fraction(1)
    run(phase1_cost, forbidden)
    if objective(phase1_cost) > 0:
        return "infeasible", None
    # drive leftover zero-level artificials out of the basis
    for i in range(m):
        if basis[i] in art_cols:
            for j in range(ncols + n_slack):
                if tab[i][j] != 0:
                    pivot(i, j)
                    break
    cost2 = list(cvec) + [Fraction(0)] * (total - ncols)
    banned2 = set(art_cols) | forbidden
    status = run(cost2, banned2)
    if status != "optimal":
        return status, None
    return "optimal", objective(cost2)
