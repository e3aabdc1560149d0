import numpy as np
import pytest

from diffsafe.subproblem import (Case, SubproblemInput, classify,
                                 kkt_residuals, solve_dual, solve_step)

from oracles import (dual_value_oracle, geometric_case,
                     projected_gradient_solve)


def inp(g, q, c, dh):
    return SubproblemInput(np.asarray(g, dtype=float),
                           np.asarray(q, dtype=float), float(c), float(dh))


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def test_classify_infeasible_recovery():
    assert classify(inp([1.0], [0.1], 1.0, 1.0)) is Case.INFEASIBLE_RECOVERY


def test_classify_all_feasible():
    assert classify(inp([0.0, 1.0], [0.0, 1.0], -10.0, 1.0)) is Case.ALL_FEASIBLE


def test_classify_boundary():
    assert classify(inp([1.0, 0.0], [1.0, 0.0], 0.0, 1.0)) is Case.BOUNDARY


def test_classify_vanished_constraint_gradient():
    with pytest.raises(ValueError, match="constraint gradient vanished"):
        classify(inp([1.0, 0.0], [0.0, 0.0], 1.0, 1.0))
    assert classify(inp([1.0, 0.0], [0.0, 0.0], -1.0, 1.0)) is Case.ALL_FEASIBLE


def test_classify_matches_geometric_oracle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        dim = rng.integers(2, 65)
        g = rng.standard_normal(dim)
        q = rng.standard_normal(dim)
        c = rng.uniform(-2, 2)
        dh = rng.uniform(0.1, 4.0)
        assert classify(inp(g, q, c, dh)).value == geometric_case(g, q, c, dh)


# ---------------------------------------------------------------------------
# closed-form steps, worked instances
# ---------------------------------------------------------------------------

def test_recovery_step_formula():
    sol = solve_step(inp([0.3, -0.2], [1.0, 0.0], 5.0, 1.0))
    assert sol.case is Case.INFEASIBLE_RECOVERY
    np.testing.assert_allclose(sol.delta, [-1.0, 0.0], atol=1e-14)


def test_all_feasible_step_formula():
    sol = solve_step(inp([0.0, 2.0], [0.0, 0.1], -10.0, 4.0))
    assert sol.case is Case.ALL_FEASIBLE
    np.testing.assert_allclose(sol.delta, [0.0, 2.0], atol=1e-14)


def test_boundary_orthogonal_gradients():
    sol = solve_step(inp([1.0, 0.0], [0.0, 1.0], 0.0, 1.0))
    assert sol.case is Case.BOUNDARY
    assert sol.nu_star == pytest.approx(0.0, abs=1e-12)
    assert sol.lambda_star == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(sol.delta, [1.0, 0.0], atol=1e-12)


def test_boundary_worked_instance():
    # r=2, s=1, t=1; the nu-inactive region is empty, lambda comes from the
    # active branch: sqrt((2-1)/(1-0)) = 1, nu = 1, delta = (0, 1)
    sol = solve_step(inp([1.0, 1.0], [1.0, 0.0], 0.0, 1.0))
    assert (sol.r, sol.s, sol.t) == (2.0, 1.0, 1.0)
    assert sol.lambda_star == pytest.approx(1.0, rel=1e-12)
    assert sol.nu_star == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(sol.delta, [0.0, 1.0], atol=1e-12)
    assert float(sol.delta @ np.array([1.0, 1.0])) == pytest.approx(1.0, rel=1e-12)


def test_boundary_parallel_gradients_takes_plane_step():
    # g exactly parallel to q and already feasible: the optimum sits on the
    # linearized constraint plane, lambda* = 0, nu* = 1
    g = np.array([2.0, 0.0])
    sol = solve_step(inp(g, g, -0.5, 1.0))
    assert sol.case is Case.BOUNDARY
    assert sol.lambda_star == pytest.approx(0.0, abs=1e-12)
    qd = float(sol.delta @ g)
    assert qd == pytest.approx(0.5, rel=1e-12)
    res = kkt_residuals(inp(g, g, -0.5, 1.0), sol)
    assert res.stationarity < 1e-10


def test_vanished_objective_gradient_sentinel():
    sol = solve_step(inp([0.0, 0.0], [1.0, 0.0], -0.1, 1.0))
    assert sol.case is Case.BOUNDARY
    assert sol.lambda_star == 0.0
    np.testing.assert_array_equal(sol.delta, [0.0, 0.0])
    # slightly infeasible with no objective gradient: min-norm feasible point
    sol = solve_step(inp([0.0, 0.0], [1.0, 0.0], 0.5, 1.0))
    np.testing.assert_allclose(sol.delta, [-0.5, 0.0], atol=1e-14)


# ---------------------------------------------------------------------------
# random-instance suites
# ---------------------------------------------------------------------------

def random_instances(n, seed=1):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        dim = int(rng.integers(2, 65))
        yield inp(rng.standard_normal(dim), rng.standard_normal(dim),
                  rng.uniform(-2, 2), rng.uniform(0.1, 4.0))


def test_kkt_residual_suite():
    checked = 0
    for problem in random_instances(1000):
        sol = solve_step(problem)
        assert float(sol.delta @ sol.delta) <= problem.delta_hat * (1 + 1e-9)
        if sol.case is not Case.BOUNDARY:
            continue
        checked += 1
        res = kkt_residuals(problem, sol)
        scale = 1.0 + float(np.linalg.norm(problem.g))
        assert res.stationarity <= 1e-8 * scale
        assert res.primal_linear <= 1e-8
        assert res.primal_ball <= 1e-8
        assert res.comp_nu <= 1e-8
        assert res.comp_lambda <= 1e-8 * scale
        assert res.dual_feasible
    assert checked > 200


def test_objective_matches_projected_gradient_oracle():
    for problem in random_instances(400, seed=2):
        if classify(problem) is Case.INFEASIBLE_RECOVERY:
            continue
        sol = solve_step(problem)
        achieved = float(problem.g @ sol.delta)
        _, oracle_val = projected_gradient_solve(problem.g, problem.q,
                                                 problem.c, problem.delta_hat)
        assert achieved >= oracle_val - 1e-6 * (1 + abs(oracle_val))
        # and never better than the dual bound
        dual_val = dual_value_oracle(problem.g, problem.q, problem.c,
                                     problem.delta_hat)
        assert achieved <= dual_val + 1e-6 * (1 + abs(dual_val))


def test_oracles_agree_with_each_other():
    for problem in random_instances(100, seed=3):
        if classify(problem) is Case.INFEASIBLE_RECOVERY:
            continue
        _, pga = projected_gradient_solve(problem.g, problem.q, problem.c,
                                          problem.delta_hat)
        dual = dual_value_oracle(problem.g, problem.q, problem.c,
                                 problem.delta_hat)
        assert pga <= dual + 1e-7 * (1 + abs(dual))
        assert pga >= dual - 1e-5 * (1 + abs(dual))


# ---------------------------------------------------------------------------
# invariances and continuity
# ---------------------------------------------------------------------------

def test_objective_rescaling_invariances():
    rng = np.random.default_rng(4)
    for _ in range(50):
        dim = int(rng.integers(2, 16))
        g = rng.standard_normal(dim)
        q = rng.standard_normal(dim)
        c = rng.uniform(-2, 2)
        dh = rng.uniform(0.1, 2.0)
        a = rng.uniform(0.1, 10.0)
        base = solve_step(inp(g, q, c, dh))
        scaled_g = solve_step(inp(a * g, q, c, dh))
        assert scaled_g.case is base.case
        if base.case is Case.ALL_FEASIBLE:
            np.testing.assert_allclose(scaled_g.delta, base.delta, rtol=1e-10)
        if base.case is Case.INFEASIBLE_RECOVERY:
            both = solve_step(inp(a * g, a * q, a * c, dh))
            np.testing.assert_allclose(both.delta, base.delta, rtol=1e-10)


def test_case_boundary_continuity():
    # as c increases to the tangency point from inside the boundary case, the
    # feasible lens shrinks onto the tangent point and the step converges to
    # the recovery step (the lens rim allows sqrt(2*eps*dh) of slack en route)
    g = np.array([0.6, -0.2, 1.1])
    q = np.array([1.0, 0.5, -0.3])
    dh = 0.5
    c_star = np.sqrt(dh * float(q @ q))
    recovery = -np.sqrt(dh) / np.linalg.norm(q) * q
    deviations = []
    for eps in (1e-5, 1e-7, 1e-9, 1e-11):
        c = c_star * (1 - eps)
        sol = solve_step(inp(g, q, c, dh))
        assert sol.case is Case.BOUNDARY
        deviations.append(np.linalg.norm(sol.delta - recovery))
    assert all(a >= b for a, b in zip(deviations, deviations[1:]))
    assert deviations[-1] < 1e-4 * (1 + np.linalg.norm(recovery))


def test_cauchy_schwarz_guard_counts():
    from diffsafe import subproblem as sp
    before = sp.cs_clamp_count()
    g = np.array([1.0, 1.0])
    solve_step(inp(g, 2 * g, -0.1, 1.0))   # exactly parallel: r - s^2/t == 0
    assert sp.cs_clamp_count() >= before   # guard never goes negative


def test_delta_hat_is_squared_radius():
    # |delta|^2 equals delta_hat on full-radius cases: radius sqrt(delta_hat)
    sol = solve_step(inp([3.0, 4.0], [1.0, 0.0], 9.0, 4.0))
    assert sol.case is Case.INFEASIBLE_RECOVERY
    assert float(sol.delta @ sol.delta) == pytest.approx(4.0, rel=1e-12)
