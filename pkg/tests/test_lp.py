"""LP layer tests against an independent brute-force vertex-enumeration oracle."""

import itertools

import numpy as np
import pytest

from mgems.lp import (
    HighsSolver,
    LpError,
    LpModel,
    LpStatus,
    SimplexSolver,
    dual_of,
    duality_gap,
    dump_lp,
    solve_lp,
)

SOLVERS = [SimplexSolver(), HighsSolver()]
SOLVER_IDS = ["simplex", "highs"]


def make_model(c, lo, hi, a, senses, b, labels=None):
    m = len(b)
    labels = labels if labels is not None else tuple(range(m))
    return LpModel(np.asarray(c, float), np.asarray(lo, float), np.asarray(hi, float),
                   np.asarray(a, float).reshape(m, -1), tuple(senses),
                   np.asarray(b, float), tuple(labels))


def enumerate_vertices(model):
    """Brute-force oracle: best objective over all basic feasible points.

    Stacks every constraint (rows and finite bounds) as candidate equalities,
    solves each n-subset, and keeps feasible solutions.  Exponential, so only
    for tiny instances; independent of the simplex code path.
    """
    n = model.n_vars
    rows = [(model.a[i], model.b[i]) for i in range(model.n_rows)]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(model.lo[j]):
            rows.append((e.copy(), model.lo[j]))
        if np.isfinite(model.hi[j]):
            rows.append((e, model.hi[j]))

    def feasible(x):
        if np.any(x < model.lo - 1e-8) or np.any(x > model.hi + 1e-8):
            return False
        ax = model.a @ x
        for i, s in enumerate(model.senses):
            r = ax[i] - model.b[i]
            if s == "E" and abs(r) > 1e-8:
                return False
            if s == "L" and r > 1e-8:
                return False
            if s == "G" and r < -1e-8:
                return False
        return True

    best = None
    for subset in itertools.combinations(range(len(rows)), n):
        mat = np.array([rows[i][0] for i in subset])
        rhs = np.array([rows[i][1] for i in subset])
        if abs(np.linalg.det(mat)) < 1e-10:
            continue
        x = np.linalg.solve(mat, rhs)
        if feasible(x):
            val = float(model.c @ x)
            if best is None or val < best:
                best = val
    return best


def random_bounded_model(rng, n_max=6, m_max=6):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    c = rng.normal(size=n)
    lo = rng.uniform(-5, 0, size=n)
    hi = lo + rng.uniform(0.5, 8, size=n)
    a = rng.normal(size=(m, n))
    senses = rng.choice(["L", "G", "E"], size=m, p=[0.5, 0.3, 0.2])
    # anchor RHS near a feasible interior point so most instances are feasible
    x0 = rng.uniform(lo, hi)
    slack = rng.normal(scale=1.5, size=m)
    b = a @ x0 + np.where(senses == "L", np.abs(slack), np.where(senses == "G", -np.abs(slack), 0.0))
    return make_model(c, lo, hi, a, senses, b)


@pytest.mark.parametrize("solver", SOLVERS, ids=SOLVER_IDS)
class TestAgainstOracle:
    def test_max_x_le_5(self, solver):
        # max x == min -x s.t. x <= 5, 0 <= x <= 10
        model = make_model([-1.0], [0.0], [10.0], [[1.0]], ["L"], [5.0], ["cap"])
        sol = solver.solve(model)
        assert sol.status is LpStatus.OPTIMAL
        assert sol.x[0] == pytest.approx(5.0, abs=1e-9)
        assert sol.objective == pytest.approx(-5.0, abs=1e-9)
        assert dual_of(sol, "cap") == pytest.approx(-1.0, abs=1e-9)

    def test_infeasible_bounds(self, solver):
        model = make_model([0.0], [0.0], [1.0], [[1.0]], ["E"], [3.0])
        assert solver.solve(model).status is LpStatus.INFEASIBLE

    def test_unbounded(self, solver):
        model = make_model([-1.0], [0.0], [np.inf], [[1.0]], ["G"], [1.0])
        assert solver.solve(model).status is LpStatus.UNBOUNDED

    def test_equality_dual_sign(self, solver):
        # min x s.t. x = 2: objective rises 1:1 with the rhs
        model = make_model([1.0], [-10.0], [10.0], [[1.0]], ["E"], [2.0], ["pin"])
        sol = solver.solve(model)
        assert dual_of(sol, "pin") == pytest.approx(1.0, abs=1e-9)

    def test_nonbinding_row_zero_dual(self, solver):
        model = make_model([1.0], [0.0], [1.0], [[1.0]], ["L"], [50.0], ["loose"])
        sol = solver.solve(model)
        assert sol.x[0] == pytest.approx(0.0, abs=1e-9)
        assert dual_of(sol, "loose") == pytest.approx(0.0, abs=1e-9)

    def test_random_lps_match_vertex_enumeration(self, solver):
        rng = np.random.default_rng(20260809)
        n_feasible = 0
        for _ in range(200):
            model = random_bounded_model(rng)
            expected = enumerate_vertices(model)
            sol = solver.solve(model)
            if expected is None:
                assert sol.status is LpStatus.INFEASIBLE
            else:
                assert sol.status is LpStatus.OPTIMAL
                assert sol.objective == pytest.approx(expected, abs=1e-6, rel=1e-6)
                gap = duality_gap(model, sol)
                assert gap <= 1e-6 * (1.0 + abs(sol.objective))
                n_feasible += 1
        assert n_feasible >= 100  # the generator should mostly produce feasible LPs

    def test_dual_matches_finite_difference(self, solver):
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(40):
            model = random_bounded_model(rng)
            sol = solver.solve(model)
            if sol.status is not LpStatus.OPTIMAL:
                continue
            eps = 1e-3
            for i, lab in enumerate(model.row_labels):
                b2 = model.b.copy()
                b2[i] += eps
                pert = solver.solve(LpModel(model.c, model.lo, model.hi, model.a,
                                            model.senses, b2, model.row_labels))
                if pert.status is not LpStatus.OPTIMAL:
                    continue
                fd = (pert.objective - sol.objective) / eps
                # degenerate rows can kink exactly at b; allow them to differ
                if abs(fd - sol.duals[lab]) <= 1e-4 * (1 + abs(fd)):
                    checked += 1
        assert checked >= 60

    def test_determinism(self, solver):
        rng = np.random.default_rng(11)
        model = random_bounded_model(rng)
        s1 = solver.solve(model)
        s2 = solver.solve(model)
        assert s1.status is s2.status
        if s1.status is LpStatus.OPTIMAL:
            assert s1.objective == s2.objective
            assert np.array_equal(s1.x, s2.x)


class TestModelContainer:
    def test_dimension_mismatch_rejected(self):
        with pytest.raises(LpError):
            make_model([1.0, 2.0], [0, 0], [1, 1], [[1.0]], ["L"], [1.0])

    def test_duplicate_labels_rejected(self):
        with pytest.raises(LpError):
            make_model([1.0], [0.0], [1.0], [[1.0], [1.0]], ["L", "L"], [1.0, 2.0],
                       labels=["same", "same"])

    def test_unknown_dual_label(self):
        model = make_model([1.0], [0.0], [1.0], [[1.0]], ["L"], [5.0], ["row"])
        sol = solve_lp(model)
        with pytest.raises(LpError):
            dual_of(sol, "nope")

    def test_with_rhs_shares_matrix(self):
        model = make_model([1.0], [0.0], [10.0], [[1.0]], ["E"], [2.0], ["pin"])
        other = model.with_rhs({"pin": 4.0})
        assert other.a is model.a
        assert model.b[0] == 2.0 and other.b[0] == 4.0
        assert solve_lp(other).x[0] == pytest.approx(4.0)

    def test_dump_lp_roundtrip_text(self):
        model = make_model([1.0, -2.0], [0.0, 0.0], [4.0, np.inf],
                           [[1.0, 1.0]], ["L"], [3.0], ["cap"])
        text = dump_lp(model)
        assert "Minimize" in text and "Subject To" in text and "<= 3" in text


def test_solvers_agree_on_random_instances():
    rng = np.random.default_rng(99)
    simplex, highs = SimplexSolver(), HighsSolver()
    for _ in range(60):
        model = random_bounded_model(rng)
        a, b = simplex.solve(model), highs.solve(model)
        assert a.status is b.status
        if a.status is LpStatus.OPTIMAL:
            assert a.objective == pytest.approx(b.objective, abs=1e-6, rel=1e-6)


def test_degenerate_lp_terminates():
    # many redundant rows through the same vertex: stresses cycling guards
    n = 4
    c = -np.ones(n)
    a = np.vstack([np.eye(n), np.ones((3, n))])
    senses = ["L"] * (n + 3)
    b = np.concatenate([np.ones(n), np.full(3, float(n))])
    model = make_model(c, np.zeros(n), np.full(n, 10.0), a, senses, b)
    sol = solve_lp(model)
    assert sol.status is LpStatus.OPTIMAL
    assert sol.objective == pytest.approx(-n, abs=1e-8)
