import json

import numpy as np
import pytest

from diffsafe.envs import (FloorFunctionEnv, FunctionEnv, PointMassEnv,
                           make_env)

from oracles import central_diff, rel_err


def test_function_env_transition():
    env = FunctionEnv()
    res = env.step(np.array([[0.0]]), np.array([[1.0]]))
    assert res.next_state[0, 0] == pytest.approx(0.2, abs=1e-15)


def test_function_env_signal_at_origin():
    env = FunctionEnv()
    res = env.step(np.array([[0.0]]), np.array([[0.0]]))
    assert res.reward[0] == pytest.approx(0.1, abs=1e-15)
    assert res.cost[0] == pytest.approx(0.1, abs=1e-15)


def test_function_env_signal_at_ten():
    env = FunctionEnv()
    res = env.step(np.array([[10.0]]), np.array([[0.0]]))
    expected = (10.0 / 10.0) ** 2 + 0.1 + 0.1 * np.sin(80.0 / np.pi)
    assert res.cost[0] == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.1326, abs=5e-4)


def test_function_env_reward_equals_cost():
    env = FunctionEnv()
    rng = np.random.default_rng(0)
    s = rng.uniform(-5, 5, size=(50, 1))
    a = rng.uniform(-1, 1, size=(50, 1))
    res = env.step(s, a)
    np.testing.assert_array_equal(res.reward, res.cost)


def test_function_env_action_clamped_not_rejected():
    env = FunctionEnv()
    res = env.step(np.array([[0.0]]), np.array([[5.0]]))
    assert res.next_state[0, 0] == pytest.approx(0.2)


def test_function_env_jacobian_values():
    env = FunctionEnv()
    jac = env.jacobians(np.array([[0.0]]), np.array([[0.0]]))
    assert jac.df_da[0, 0, 0] == pytest.approx(0.2, abs=1e-15)
    assert jac.df_ds[0, 0, 0] == pytest.approx(1.0, abs=1e-15)
    assert jac.dc_ds[0, 0] == pytest.approx(0.8 / np.pi, rel=1e-12)
    fd = central_diff(lambda x: FunctionEnv.terrain(np.array([x]))[0], 0.0)
    assert rel_err(jac.dc_ds[0, 0], fd) < 1e-6


def test_function_env_transition_affine_in_action():
    env = FunctionEnv()
    s = np.array([[0.3]])
    j1 = env.jacobians(s, np.array([[0.1]]))
    j2 = env.jacobians(s, np.array([[-0.7]]))
    assert j1.df_da[0, 0, 0] == j2.df_da[0, 0, 0] == pytest.approx(0.2)


@pytest.mark.parametrize("env_cls", [FunctionEnv, PointMassEnv])
def test_jacobians_match_finite_differences(env_cls):
    env = env_cls()
    d_s, d_a = env.spec.state_dim, env.spec.action_dim
    rng = np.random.default_rng(42)
    for _ in range(100):
        s = rng.uniform(-3, 3, size=(1, d_s))
        a = rng.uniform(-0.95, 0.95, size=(1, d_a))
        jac = env.jacobians(s, a)
        h = 1e-6
        for i in range(d_s):
            sp, sm = s.copy(), s.copy()
            sp[0, i] += h
            sm[0, i] -= h
            rp, rm = env.step(sp, a), env.step(sm, a)
            fd_f = (rp.next_state[0] - rm.next_state[0]) / (2 * h)
            assert np.all(rel_err(jac.df_ds[0, :, i], fd_f) < 1e-6)
            assert rel_err(jac.dr_ds[0, i], (rp.reward[0] - rm.reward[0]) / (2 * h)) < 1e-6
            assert rel_err(jac.dc_ds[0, i], (rp.cost[0] - rm.cost[0]) / (2 * h)) < 1e-6
        for i in range(d_a):
            ap, am = a.copy(), a.copy()
            ap[0, i] += h
            am[0, i] -= h
            rp, rm = env.step(s, ap), env.step(s, am)
            fd_f = (rp.next_state[0] - rm.next_state[0]) / (2 * h)
            assert np.all(rel_err(jac.df_da[0, :, i], fd_f) < 1e-6)
            assert rel_err(jac.dr_da[0, i], (rp.reward[0] - rm.reward[0]) / (2 * h)) < 1e-6
            assert rel_err(jac.dc_da[0, i], (rp.cost[0] - rm.cost[0]) / (2 * h)) < 1e-6


def test_floor_env_costs():
    env = FloorFunctionEnv()
    res = env.step(np.array([[0.7]]), np.array([[0.0]]))
    assert res.cost[0] == pytest.approx(0.1 + 0.1 * np.sin(5.6 / np.pi), rel=1e-12)
    res = env.step(np.array([[1.0]]), np.array([[0.0]]))
    assert res.cost[0] == pytest.approx(0.01 + 0.1 + 0.1 * np.sin(8.0 / np.pi), rel=1e-12)
    res = env.step(np.array([[0.0]]), np.array([[-1.0]]))
    assert res.next_state[0, 0] == pytest.approx(-0.2, abs=1e-15)


def test_floor_env_not_differentiable():
    env = FloorFunctionEnv()
    assert env.spec.differentiable is False
    with pytest.raises(RuntimeError, match="no analytic Jacobians"):
        env.jacobians(np.array([[0.5]]), np.array([[0.0]]))


def test_floor_vs_smooth_difference_is_exactly_quadratic_term():
    # on [0, 1) the floored quadratic term vanishes, so the two terrains
    # differ by exactly (x/10)^2 and coincide at x = 0
    xs = np.linspace(0.0, 0.999, 64)
    diff = FunctionEnv.terrain(xs) - FloorFunctionEnv.terrain(xs)
    np.testing.assert_allclose(diff, (xs / 10.0) ** 2, rtol=0, atol=1e-15)
    assert FloorFunctionEnv.terrain(np.array([0.0]))[0] == FunctionEnv.terrain(np.array([0.0]))[0]


def test_point_mass_fixed_point():
    env = PointMassEnv()
    res = env.step(np.array([[0.0, 0.0]]), np.array([[0.0]]))
    np.testing.assert_array_equal(res.next_state, [[0.0, 0.0]])
    assert res.reward[0] == 1.0
    assert res.cost[0] == 0.0


def test_point_mass_euler_step():
    env = PointMassEnv()
    res = env.step(np.array([[0.0, 1.0]]), np.array([[0.0]]))
    assert res.next_state[0, 0] == pytest.approx(0.1, abs=1e-15)
    assert res.next_state[0, 1] == pytest.approx(1.0, abs=1e-15)


def test_reset_determinism_and_support():
    for env in (FunctionEnv(), PointMassEnv()):
        s1 = env.reset(42, 5)
        s2 = env.reset(42, 5)
        np.testing.assert_array_equal(s1, s2)
        s = env.reset(0, 3)
        assert np.all(s >= -1.0) and np.all(s <= 1.0)


def test_reset_mean_near_zero():
    env = FunctionEnv()
    samples = np.concatenate([env.reset(seed, 100) for seed in range(100)])
    assert abs(samples.mean()) < 0.05


def test_reset_respects_configured_interval():
    env = FunctionEnv(init_low=-0.5, init_high=-0.5)
    s = env.reset(3, 4)
    np.testing.assert_array_equal(s, np.full((4, 1), -0.5))


def test_invalid_state_rejected():
    env = FunctionEnv()
    with pytest.raises(ValueError, match="invalid state"):
        env.step(np.array([[np.nan]]), np.array([[0.0]]))
    with pytest.raises(ValueError, match="invalid state"):
        env.step(np.array([[np.inf]]), np.array([[0.0]]))


def test_make_env_registry():
    assert make_env("function").spec.name == "function"
    assert make_env("floor-function").spec.differentiable is False
    assert make_env("point-mass").spec.state_dim == 2
    with pytest.raises(ValueError, match="unknown environment"):
        make_env("does-not-exist")


def test_env_spec_round_trips_through_json():
    spec = make_env("function", horizon=100, cost_limit=8.0).spec
    loaded = json.loads(json.dumps(spec.to_dict()))
    assert loaded["horizon"] == 100
    assert loaded["cost_limit"] == 8.0
    assert loaded["name"] == "function"
