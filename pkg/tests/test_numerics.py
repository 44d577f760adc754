"""Solver tests: known optima, oracle cross-checks, status classification."""

import numpy as np
import pytest

from pvpool.numerics import (
    ConvexQuadraticProgram,
    LinearConstraint,
    LinearProgram,
    NumericsError,
    ProblemBuilder,
    solve_lp,
    solve_qp,
)

from oracles import (
    lp_vertex_minimum,
    qp_active_set_minimum,
    random_bounded_lp,
    random_box_qp,
)


def _lp_from_dense(c, rows, lb, ub, maximize=False):
    n = len(c)
    lcs = [LinearConstraint(np.arange(n), a, s, b) for a, s, b in rows]
    return LinearProgram.from_rows(c, lcs, lb=lb, ub=ub, maximize=maximize)


def test_lp_box_maximum():
    pb = ProblemBuilder()
    pb.add_vars(1, lb=0.0, ub=3.0, cost=1.0)
    rep = solve_lp(pb.lp(maximize=True))
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(3.0, abs=1e-8)
    assert rep.x[0] == pytest.approx(3.0, abs=1e-8)


def test_lp_covering_row():
    pb = ProblemBuilder()
    idx = pb.add_vars(2, lb=0.0, ub=np.inf, cost=1.0)
    pb.add_row(idx, [1.0, 1.0], ">=", 1.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(1.0, abs=1e-8)


def test_lp_mixed_senses():
    pb = ProblemBuilder()
    idx = pb.add_vars(3, lb=0.0, ub=10.0, cost=[2.0, 3.0, 1.0])
    pb.add_row(idx, [1.0, 1.0, 1.0], ">=", 5.0)
    pb.add_row(idx[:2], [1.0, -1.0], "<=", 2.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "optimal"
    # cheapest cover puts everything on the third variable
    assert rep.objective == pytest.approx(5.0, abs=1e-7)


def test_lp_infeasible():
    pb = ProblemBuilder()
    idx = pb.add_vars(1, lb=0.0, ub=1.0, cost=1.0)
    pb.add_row(idx, [1.0], ">=", 2.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "infeasible"
    assert rep.x is None


def test_lp_unbounded_box_direction():
    pb = ProblemBuilder()
    pb.add_vars(1, lb=0.0, ub=np.inf, cost=-1.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "unbounded"


def test_lp_unbounded_through_row():
    # descent direction exists only inside the row's null space
    pb = ProblemBuilder()
    idx = pb.add_vars(2, lb=0.0, ub=np.inf, cost=[-1.0, 0.0])
    pb.add_row(idx, [1.0, -1.0], "==", 0.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "unbounded"


def test_lp_redundant_equalities():
    # three scaled copies of the same row; normal equations are singular
    pb = ProblemBuilder()
    idx = pb.add_vars(2, lb=0.0, ub=10.0, cost=[1.0, 1.0])
    pb.add_row(idx, [1.0, 1.0], "==", 3.0)
    pb.add_row(idx, [2.0, 2.0], "==", 6.0)
    pb.add_row(idx, [0.5, 0.5], "==", 1.5)
    rep = solve_lp(pb.lp(), tol=1e-10)
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(3.0, abs=1e-8)


def test_lp_inconsistent_duplicate_rows():
    pb = ProblemBuilder()
    idx = pb.add_vars(2, lb=0.0, ub=10.0, cost=[1.0, 1.0])
    pb.add_row(idx, [1.0, 1.0], "==", 3.0)
    pb.add_row(idx, [1.0, 1.0], "==", 4.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "infeasible"


def test_lp_fixed_variables_presolved():
    pb = ProblemBuilder()
    free = pb.add_vars(1, lb=0.0, ub=5.0, cost=1.0)
    pinned = pb.add_vars(1, lb=2.0, ub=2.0, cost=10.0)
    pb.add_row(np.concatenate([free, pinned]), [1.0, 1.0], ">=", 3.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "optimal"
    assert rep.x[1] == pytest.approx(2.0)
    assert rep.objective == pytest.approx(1.0 * 1.0 + 10.0 * 2.0, abs=1e-7)


def test_lp_free_variable_kkt_path():
    # a variable with no bounds and no curvature exercises the kkt solve
    pb = ProblemBuilder()
    x = pb.add_vars(1, lb=-np.inf, ub=np.inf, cost=1.0)
    y = pb.add_vars(1, lb=-3.0, ub=5.0, cost=0.0)
    pb.add_row(np.concatenate([x, y]), [1.0, -1.0], "==", 0.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(-3.0, abs=1e-7)


def test_lp_empty_row_consistency():
    row = LinearConstraint(np.array([0]), np.array([0.0]), "==", 1.0)
    lp = LinearProgram.from_rows(np.array([1.0]), [row], lb=[0.0], ub=[1.0])
    assert solve_lp(lp).status == "infeasible"


def test_lp_vertex_oracle_agreement():
    rng = np.random.default_rng(20240817)
    for _ in range(300):
        c, rows, lb, ub = random_bounded_lp(rng)
        rep = solve_lp(_lp_from_dense(c, rows, lb, ub), tol=1e-10)
        ref, _ = lp_vertex_minimum(c, rows, lb, ub)
        if ref is None:
            # rounding can hide a sliver-thin feasible set from the oracle
            assert rep.status in ("optimal", "infeasible")
            continue
        assert rep.status == "optimal"
        assert rep.objective == pytest.approx(ref, abs=1e-8)


def test_lp_maximize_matches_negated_minimize():
    rng = np.random.default_rng(5)
    for _ in range(50):
        c, rows, lb, ub = random_bounded_lp(rng)
        hi = solve_lp(_lp_from_dense(c, rows, lb, ub, maximize=True), tol=1e-10)
        lo = solve_lp(_lp_from_dense(-np.asarray(c), rows, lb, ub), tol=1e-10)
        if hi.status == "optimal" and lo.status == "optimal":
            assert hi.objective == pytest.approx(-lo.objective, abs=1e-8)


def test_qp_projection_onto_plane():
    pb = ProblemBuilder()
    idx = pb.add_vars(2, lb=-np.inf, ub=np.inf, cost=0.0, qdiag=2.0)
    pb.add_row(idx, [1.0, 1.0], "==", 2.0)
    rep = solve_qp(pb.qp())
    assert rep.status == "optimal"
    np.testing.assert_allclose(rep.x, [1.0, 1.0], atol=1e-6)


def test_qp_box_clip():
    # min (x - 1)^2 over [0, 3], written as x^2 - 2x
    pb = ProblemBuilder()
    pb.add_vars(1, lb=0.0, ub=3.0, cost=-2.0, qdiag=2.0)
    rep = solve_qp(pb.qp())
    assert rep.status == "optimal"
    assert rep.x[0] == pytest.approx(1.0, abs=1e-8)


def test_qp_spread_penalty_hits_bound():
    # 0.25 (x - y)^2 over x + y = 3 with x capped at 1
    pb = ProblemBuilder()
    idx = pb.add_vars(2, lb=0.0, ub=[1.0, 5.0], cost=0.0, qdiag=1.0)
    pb.add_row(idx, [1.0, 1.0], "==", 3.0)
    rep = solve_qp(pb.qp(rank_ones=((-0.5, np.array([1.0, 1.0])),)))
    assert rep.status == "optimal"
    np.testing.assert_allclose(rep.x, [1.0, 2.0], atol=1e-6)
    assert rep.objective == pytest.approx(0.25, abs=1e-6)


def test_qp_rank_one_without_rows():
    # no constraint rows: must not take the separable shortcut
    pb = ProblemBuilder()
    pb.add_vars(2, lb=0.0, ub=2.0, cost=[-1.0, 0.0], qdiag=1.0)
    rep = solve_qp(pb.qp(rank_ones=((1.0, np.array([1.0, 1.0])),)), tol=1e-9)
    ref, _ = qp_active_set_minimum(
        [-1.0, 0.0], [1.0, 1.0], [], [0.0, 0.0], [2.0, 2.0],
        rank_ones=((1.0, np.array([1.0, 1.0])),))
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(ref, abs=1e-8)


def test_qp_active_set_oracle_agreement():
    rng = np.random.default_rng(7)
    for _ in range(150):
        c, q, rows, lb, ub, rank_ones = random_box_qp(rng)
        n = len(c)
        lcs = [LinearConstraint(np.arange(n), a, s, b) for a, s, b in rows]
        qp = ConvexQuadraticProgram.from_rows(c, q, lcs, lb=lb, ub=ub,
                                              rank_ones=rank_ones)
        rep = solve_qp(qp, tol=1e-8)
        ref, _ = qp_active_set_minimum(c, q, rows, lb, ub, rank_ones)
        if ref is None:
            assert rep.status in ("optimal", "infeasible")
            continue
        assert rep.status == "optimal"
        assert rep.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)


def test_qp_rejects_negative_diagonal():
    with pytest.raises(NumericsError):
        ConvexQuadraticProgram.from_rows([0.0], [-1.0], [], lb=[0.0], ub=[1.0])


def test_qp_rejects_indefinite_rank_one():
    # q = 1 each, rho = -2 on [1, 1]: 1 - 2 * 2 < 0, not PSD
    with pytest.raises(NumericsError):
        ConvexQuadraticProgram.from_rows(
            [0.0, 0.0], [1.0, 1.0], [], lb=[0.0, 0.0], ub=[1.0, 1.0],
            rank_ones=((-2.0, np.array([1.0, 1.0])),))


def test_qp_rejects_negative_rank_one_off_diagonal_support():
    with pytest.raises(NumericsError):
        ConvexQuadraticProgram.from_rows(
            [0.0, 0.0], [1.0, 0.0], [], lb=[0.0, 0.0], ub=[1.0, 1.0],
            rank_ones=((-0.5, np.array([1.0, 1.0])),))


def test_qp_rejects_two_negative_rank_ones():
    with pytest.raises(NumericsError):
        ConvexQuadraticProgram.from_rows(
            [0.0, 0.0], [4.0, 4.0], [], lb=[0.0, 0.0], ub=[1.0, 1.0],
            rank_ones=((-0.5, np.array([1.0, 0.0])),
                       (-0.5, np.array([0.0, 1.0]))))


def test_constraint_validation():
    with pytest.raises(NumericsError):
        LinearConstraint(np.array([0]), np.array([1.0]), "<", 0.0)
    with pytest.raises(NumericsError):
        LinearConstraint(np.array([0, 1]), np.array([1.0]), "<=", 0.0)
    with pytest.raises(NumericsError):
        LinearConstraint(np.array([0]), np.array([np.nan]), "<=", 0.0)


def test_program_validation():
    row = LinearConstraint(np.array([0]), np.array([1.0]), "<=", 1.0)
    with pytest.raises(NumericsError):
        LinearProgram.from_rows([1.0], [row], lb=[2.0], ub=[1.0])
    bad = LinearConstraint(np.array([3]), np.array([1.0]), "<=", 1.0)
    with pytest.raises(NumericsError):
        LinearProgram.from_rows([1.0], [bad], lb=[0.0], ub=[1.0])
    with pytest.raises(NumericsError):
        solve_lp(ConvexQuadraticProgram.from_rows([1.0], [1.0], [row]))  # type: ignore[arg-type]


def test_builder_offset_splice():
    rows = [LinearConstraint(np.array([0]), np.array([1.0]), "<=", 2.0)]
    pb = ProblemBuilder()
    pb.add_vars(1, lb=0.0, ub=9.0, cost=0.0)
    block = pb.add_vars(1, lb=0.0, ub=9.0, cost=-1.0)
    pb.add_constraints(rows, offset=int(block[0]))
    rep = solve_lp(pb.lp())
    assert rep.status == "optimal"
    assert rep.x[1] == pytest.approx(2.0, abs=1e-8)


def test_report_residuals_recomputable():
    rng = np.random.default_rng(11)
    c, rows, lb, ub = random_bounded_lp(rng, max_vars=4, max_rows=3)
    lp = _lp_from_dense(c, rows, lb, ub)
    rep = solve_lp(lp, tol=1e-10)
    assert rep.status == "optimal"
    worst = 0.0
    for a, s, b in rows:
        v = float(np.asarray(a) @ rep.x)
        if s == "<=":
            worst = max(worst, v - b)
        elif s == ">=":
            worst = max(worst, b - v)
        else:
            worst = max(worst, abs(v - b))
    worst = max(worst, float(np.max(lb - rep.x, initial=0.0)))
    worst = max(worst, float(np.max(rep.x - ub, initial=0.0)))
    assert rep.primal_residual == pytest.approx(max(worst, 0.0), abs=1e-12)
    assert rep.objective == pytest.approx(float(np.asarray(c) @ rep.x), abs=1e-9)


def test_solver_is_deterministic():
    rng = np.random.default_rng(99)
    c, rows, lb, ub = random_bounded_lp(rng)
    lp = _lp_from_dense(c, rows, lb, ub)
    first = solve_lp(lp, tol=1e-10)
    second = solve_lp(lp, tol=1e-10)
    assert first.x.tobytes() == second.x.tobytes()
    assert first.objective == second.objective
    assert first.iterations == second.iterations


def test_dispatch_shaped_lp():
    # storage chain plus import/export split at a realistic horizon length
    horizon = 48
    rng = np.random.default_rng(0)
    load = rng.uniform(5.0, 40.0, horizon)
    pv = rng.uniform(0.0, 60.0, horizon)
    price = rng.uniform(0.1, 0.3, horizon)
    eff = np.sqrt(0.9)
    p_max, e_max = 20.0, 40.0
    pb = ProblemBuilder()
    gg = pb.add_vars(horizon, lb=0.0, ub=np.inf, cost=price)
    gs = pb.add_vars(horizon, lb=0.0, ub=np.inf, cost=-0.05)
    ch = pb.add_vars(horizon, lb=0.0, ub=p_max, cost=0.0)
    di = pb.add_vars(horizon, lb=0.0, ub=p_max, cost=0.0)
    soc = pb.add_vars(horizon + 1, lb=0.0, ub=e_max, cost=0.0)
    for t in range(horizon):
        pb.add_row([gg[t], gs[t], ch[t], di[t]], [1.0, -1.0, -1.0, 1.0],
                   "==", load[t] - pv[t])
        pb.add_row([soc[t + 1], soc[t], ch[t], di[t]],
                   [1.0, -1.0, -eff, 1.0 / eff], "==", 0.0)
        pb.add_row([gg[t]], [1.0], "<=", load[t])
    pb.add_row([soc[0], soc[horizon]], [1.0, -1.0], "==", 0.0)
    rep = solve_lp(pb.lp(), tol=1e-9)
    assert rep.status == "optimal"
    assert rep.primal_residual < 1e-9
    # import and export never overlap at the optimum
    assert float(np.minimum(rep.x[gg], rep.x[gs]).max()) < 1e-8


def test_forcing_row_pins_variables_without_iterations():
    pb = ProblemBuilder()
    x = pb.add_vars(2, lb=0.0, ub=1.0, cost=[3.0, -2.0])
    pb.add_row(x, [1.0, 1.0], "==", 2.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "optimal"
    assert np.allclose(rep.x, [1.0, 1.0])
    assert rep.iterations == 0


def test_forcing_rows_cascade():
    pb = ProblemBuilder()
    x = pb.add_vars(3, lb=0.0, ub=[1.0, 1.0, 3.0], cost=1.0)
    pb.add_row(x[:2], [1.0, 1.0], "==", 2.0)
    pb.add_row(x[1:], [1.0, 1.0], "==", 1.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "optimal"
    assert np.allclose(rep.x, [1.0, 1.0, 0.0])
    assert rep.iterations == 0


def test_forcing_detects_excluded_rhs():
    pb = ProblemBuilder()
    x = pb.add_vars(2, lb=0.0, ub=1.0)
    pb.add_row(x, [1.0, 1.0], "==", 3.0)
    rep = solve_lp(pb.lp())
    assert rep.status == "infeasible"
    assert rep.iterations == 0


def test_equality_pinned_variable_qp():
    # an equality that pins a variable to its bound leaves no interior;
    # only the presolve can hand this to the interior-point method
    pb = ProblemBuilder()
    x = pb.add_vars(1, lb=0.0, ub=2.78, qdiag=2.0)
    pb.add_row(x, [1.0], "==", 2.78)
    rep = solve_qp(pb.qp())
    assert rep.status == "optimal"
    assert rep.x[0] == pytest.approx(2.78, abs=1e-12)


def test_forced_import_with_no_battery():
    # night period without storage: import must equal the load exactly
    load = 4.2
    pb = ProblemBuilder()
    gg = pb.add_vars(1, lb=0.0, ub=load, cost=0.13)
    gs = pb.add_vars(1, lb=0.0, cost=-0.06)
    pb.add_row(np.concatenate([gg, gs]), [1.0, -1.0], "==", load)
    rep = solve_lp(pb.lp())
    assert rep.status == "optimal"
    assert rep.x[0] == pytest.approx(load)
    assert rep.x[1] == pytest.approx(0.0)
    assert rep.iterations == 0


def test_forcing_near_boundary_target_stays_feasible():
    # a right-hand side within the forcing tolerance of the row's maximum
    # activity pins the variables with a sub-tolerance residual; the second
    # pass must treat that row as settled rather than contradictory
    pb = ProblemBuilder()
    x = pb.add_vars(2, lb=0.0, ub=1.0, cost=1.0)
    pb.add_row(x, [1.0, 1.0], "==", 2.0 - 2e-10)
    rep = solve_lp(pb.lp())
    assert rep.status == "optimal"
    assert np.allclose(rep.x, [1.0, 1.0], atol=1e-8)
