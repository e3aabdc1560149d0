import dataclasses

import numpy as np
import pytest

from diffsafe.config import RunConfig
from diffsafe.envs import FunctionEnv
from diffsafe.gradients import measure, rollout
from diffsafe.nets import FiniteHorizonCritic, WorldModel
from diffsafe.optim import TrainingDiverged
from diffsafe.trainer import (CriticUpdateConfig, RadiusController, RatioPair,
                              WorldModelTrainConfig, build_env, cgpo_iteration,
                              child_seed, compute_ratios, critic_update,
                              init_train_state, lagrangian_iteration,
                              mb_cgpo_iteration, run_training,
                              td_lambda_targets, td_lambda_weights,
                              update_radius, world_model_train)


def fast_cfg(**kw):
    base = dict(env="function", algorithm="cgpo", epochs=5, num_envs=4,
                episode_length=20, horizon=20, delta_init=1e-3,
                delta_lower=1e-5, delta_upper=1e-2, critic_epochs=2,
                critic_minibatch=32, seed=3, init_low=-0.5, init_high=-0.5,
                monitor_bounds=False, cost_limit=8.0)
    base.update(kw)
    return RunConfig(**base).validate()


# ---------------------------------------------------------------------------
# ratios and radius rule
# ---------------------------------------------------------------------------

def test_ratio_exact_prediction():
    r = compute_ratios(1.0, 0.8, 0.8, 5.0, 4.0, 8.0)
    assert r.rho == pytest.approx(1.0)
    assert not r.rho_degenerate


def test_ratio_degenerate_pass():
    r = compute_ratios(1.0, 0.9, 0.7, 5.0, 5.0 + 1e-15, 8.0)
    assert r.zeta_degenerate
    ctrl = RadiusController(1e-3, 1e-5, 1e-2)
    grown = update_radius(RatioPair(0.9, float("nan"), False, True), ctrl)
    assert grown.delta_hat == pytest.approx(1.25e-3)


def test_ratio_sign_flip():
    r = compute_ratios(1.0, 0.5, 2.0, 0.0, 0.0, 8.0)
    assert r.rho == pytest.approx(-0.5)


def test_radius_shrink_branch():
    ctrl = RadiusController(4e-3, 1e-5, 1e-2, beta1=0.8, beta2=1.25)
    out = update_radius(RatioPair(0.05, 2.0), ctrl)
    assert out.delta_hat == pytest.approx(0.8 * 4e-3)
    floor = RadiusController(1.2e-5, 1e-5, 1e-2)
    assert update_radius(RatioPair(0.0, 0.0), floor).delta_hat == 1e-5


def test_radius_grow_branch_clamped():
    ctrl = RadiusController(9e-3, 1e-5, 1e-2, beta2=1.25)
    out = update_radius(RatioPair(0.9, 0.9), ctrl)
    assert out.delta_hat == 1e-2


def test_radius_hold_branch():
    ctrl = RadiusController(4e-3, 1e-5, 1e-2)
    out = update_radius(RatioPair(0.5, 0.9), ctrl)
    assert out.delta_hat == 4e-3


def test_radius_shrink_dominates_mixed_signal():
    ctrl = RadiusController(4e-3, 1e-5, 1e-2)
    out = update_radius(RatioPair(0.1, 0.9), ctrl)
    assert out.delta_hat == pytest.approx(0.8 * 4e-3)


def test_radius_controller_invariants():
    with pytest.raises(ValueError):
        RadiusController(1e-2, 1e-1, 1.0)
    with pytest.raises(ValueError):
        RadiusController(1e-3, 1e-4, 1e-2, beta1=1.2)
    with pytest.raises(ValueError):
        RadiusController(1e-3, 1e-4, 1e-2, eta1=0.9, eta2=0.3)


# ---------------------------------------------------------------------------
# TD(lambda)
# ---------------------------------------------------------------------------

def test_td_weights_sum_exactly_one_on_grid():
    import math
    for lam in (0.0, 0.3, 0.7, 0.95, 1.0):
        for h in range(1, 11):
            w = td_lambda_weights(h, lam)
            assert math.fsum(w) == 1.0
            assert np.all(w >= 0)


def test_td_limits():
    signal = np.array([[1.0, 2.0, 3.0]])
    values = np.array([[10.0, 20.0, 30.0, 40.0]])
    t0 = td_lambda_targets(signal, values, 0.0)
    np.testing.assert_allclose(t0, [[1 + 20, 2 + 30, 3 + 40]])
    t1 = td_lambda_targets(signal, values, 1.0)
    np.testing.assert_allclose(t1, [[6 + 40, 5 + 40, 3 + 40]])


def test_td_hand_expansion():
    signal = np.ones((1, 3))
    values = np.zeros((1, 4))
    targets = td_lambda_targets(signal, values, 0.5)
    assert targets[0, 0] == pytest.approx(1.75, abs=1e-15)


def test_td_weight_decay():
    w = td_lambda_weights(6, 0.5)
    assert np.all(np.diff(w[:-1]) < 0)


# ---------------------------------------------------------------------------
# critic updates
# ---------------------------------------------------------------------------

def test_critic_update_zero_targets_noop():
    critic = FiniteHorizonCritic(1, 10)
    params = critic.init_params(0)
    states = np.linspace(-1, 1, 8).reshape(-1, 1)
    ts = np.arange(8) % 10
    new, losses = critic_update(critic, params, states, ts, np.zeros(8),
                                CriticUpdateConfig(lr=1e-3, epochs=3), seed=0)
    assert losses[0] == 0.0
    np.testing.assert_allclose(new, params, atol=1e-12)


def test_critic_update_zero_lr_noop():
    critic = FiniteHorizonCritic(1, 10)
    rng = np.random.default_rng(0)
    params = critic.init_params(0) + 0.1 * rng.standard_normal(critic.n_params)
    states = rng.uniform(-1, 1, (8, 1))
    ts = np.arange(8) % 10
    targets = rng.standard_normal(8)
    new, _ = critic_update(critic, params, states, ts, targets,
                           CriticUpdateConfig(lr=0.0, epochs=1,
                                              minibatch=4), seed=0)
    np.testing.assert_array_equal(new, params)


def test_critic_update_divergence_aborts():
    critic = FiniteHorizonCritic(1, 10)
    rng = np.random.default_rng(1)
    params = critic.init_params(0) + 0.1 * rng.standard_normal(critic.n_params)
    states = rng.uniform(-1, 1, (16, 1))
    ts = np.arange(16) % 10
    targets = rng.standard_normal(16)
    with pytest.raises(TrainingDiverged):
        critic_update(critic, params, states, ts, targets,
                      CriticUpdateConfig(lr=1e4, epochs=50, minibatch=4), seed=0)


def test_critic_learns_remaining_horizon_on_constant_reward():
    # constant unit reward: the remaining-horizon value is (T - t); train
    # through the TD-target machinery over cycling windows
    T, h, n = 20, 5, 6
    critic = FiniteHorizonCritic(1, T)
    params = critic.init_params(0)
    rng = np.random.default_rng(2)
    cfg = CriticUpdateConfig(lr=1.5e-2, epochs=10, minibatch=64)
    signal = np.ones((n, T))
    for sweep in range(40):
        states = rng.uniform(-1, 1, (n, T + 1, 1))
        for t0 in (15, 10, 5, 0):
            window_states = states[:, t0:t0 + h + 1]
            values = np.stack([
                critic.forward(params, window_states[:, j], np.full(n, t0 + j))
                for j in range(h + 1)
            ], axis=1)
            targets = td_lambda_targets(signal[:, t0:t0 + h], values, 0.95)
            flat_states = window_states[:, :h].reshape(n * h, 1)
            flat_ts = np.tile(np.arange(t0, t0 + h), n)
            params, _ = critic_update(critic, params, flat_states, flat_ts,
                                      targets.reshape(-1), cfg, seed=sweep)
    test_states = rng.uniform(-1, 1, (50, 1))
    for t in (0, 4, 9, 14, 19):
        v = critic.forward(params, test_states, np.full(50, t))
        expected = T - t
        assert np.all(np.abs(v - expected) <= 0.05 * expected)


# ---------------------------------------------------------------------------
# constrained iterations
# ---------------------------------------------------------------------------

def test_infeasible_init_takes_recovery_and_decreases_cost():
    cfg = fast_cfg(init_low=0.5, init_high=0.5, episode_length=100,
                   horizon=100, epochs=10, cost_limit=8.0)
    env = build_env(cfg)
    state = init_train_state(cfg, env)
    first = cgpo_iteration(state, env, cfg)
    assert first["case"] == "infeasible-recovery"
    costs = [first["j_c_old"], first["j_c"]]
    for _ in range(9):
        rec = cgpo_iteration(state, env, cfg)
        costs.append(rec["j_c"])
    assert min(costs[1:]) < costs[0]
    assert costs[-1] < costs[0]


def test_stationary_zero_gradient_keeps_radius_at_upper():
    class Flat(FunctionEnv):
        def step(self, s, a):
            res = super().step(s, a)
            res.reward = np.zeros_like(res.reward)
            res.cost = np.zeros_like(res.cost)
            return res

        def jacobians(self, s, a):
            jac = super().jacobians(s, a)
            jac.dr_ds = np.zeros_like(jac.dr_ds)
            jac.dc_ds = np.zeros_like(jac.dc_ds)
            return jac

    cfg = fast_cfg(cost_limit=1.0, delta_init=1e-2)  # all-feasible, flat
    env = Flat(horizon=cfg.episode_length, cost_limit=cfg.cost_limit,
               init_low=-0.5, init_high=-0.5)
    state = init_train_state(cfg, env)
    rec = cgpo_iteration(state, env, cfg)
    assert rec["step_norm_sq"] == 0.0
    assert state.radius.delta_hat == cfg.delta_upper == rec["delta_hat"]


def test_cgpo_steps_respect_radius():
    cfg = fast_cfg(epochs=8, episode_length=50, horizon=50)
    result = run_training(cfg)
    for rec in result.records:
        assert rec["step_norm_sq"] <= rec["delta_hat"] * (1 + 1e-9)
        assert cfg.delta_lower <= rec["delta_hat"] <= cfg.delta_upper


def test_run_training_deterministic():
    cfg = fast_cfg(epochs=4)
    r1 = run_training(cfg)
    r2 = run_training(cfg)
    for a, b in zip(r1.records, r2.records):
        for key in a:
            if key == "wall_time_s":
                continue
            assert a[key] == b[key] or (a[key] != a[key] and b[key] != b[key])


def test_lagrangian_zero_multiplier_moves_along_g():
    cfg = fast_cfg(algorithm="bptt-lag", epochs=1)
    env = build_env(cfg)
    state = init_train_state(cfg, env)
    theta0 = state.policy_params.copy()
    from diffsafe.gradients import bptt_grads
    batch = rollout(env, state.policy, theta0, cfg.num_envs,
                    cfg.episode_length, child_seed(cfg.seed, "rollout", 0))
    gp = bptt_grads(batch, env, state.policy, theta0, cfg.cost_limit)
    lagrangian_iteration(state, env, cfg, engine="bptt")
    step = state.policy_params - theta0
    cos = step @ gp.g / (np.linalg.norm(step) * np.linalg.norm(gp.g))
    assert cos == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.norm(step) == pytest.approx(cfg.primal_lr, rel=1e-6)


def test_lagrangian_multiplier_increases_while_infeasible():
    cfg = fast_cfg(algorithm="shac-lag", horizon=5, epochs=6,
                   init_low=0.5, init_high=0.5, episode_length=100,
                   cost_limit=8.0)
    env = build_env(cfg)
    state = init_train_state(cfg, env)
    lams = [state.lagrange_multiplier]
    for _ in range(6):
        rec = lagrangian_iteration(state, env, cfg, engine="shac")
        lams.append(rec["multiplier"])
    assert all(b > a for a, b in zip(lams, lams[1:]))


# ---------------------------------------------------------------------------
# world model
# ---------------------------------------------------------------------------

def test_world_model_memorizes_single_transition():
    wm = WorldModel(1, 1, hidden=(16, 16))
    params = wm.init_params(0)
    transitions = {"s": [[0.3]], "a": [[0.5]], "s_next": [[0.4]],
                   "r": [0.2], "c": [0.2]}
    params, stats = world_model_train(
        wm, params, transitions,
        WorldModelTrainConfig(epochs=800, lr=1e-2, minibatch=1), seed=0)
    assert stats["losses"][-1] < 1e-8


def test_world_model_fits_function_env():
    env = FunctionEnv()
    from diffsafe.nets import Policy
    policy = Policy(1, 1)
    rng = np.random.default_rng(3)
    params = policy.init_params(0) + 0.05 * rng.standard_normal(policy.n_params)
    batch = rollout(env, policy, params, 100, 100, seed=5, sigma=0.3)
    transitions = {
        "s": batch.states[:, :-1].reshape(-1, 1),
        "a": batch.actions.reshape(-1, 1),
        "s_next": batch.states[:, 1:].reshape(-1, 1),
        "r": batch.rewards.reshape(-1),
        "c": batch.costs.reshape(-1),
    }
    wm = WorldModel(1, 1)
    wparams = wm.init_params(1)
    wparams, stats = world_model_train(
        wm, wparams, transitions,
        WorldModelTrainConfig(epochs=60, lr=3e-3, minibatch=512), seed=1)
    assert stats["holdout_state_mse"] < 1e-4
    assert stats["holdout_cost_mse"] < 1e-2


def test_world_model_floor_env_holdout_reported():
    from diffsafe.envs import FloorFunctionEnv
    from diffsafe.nets import Policy
    env = FloorFunctionEnv()
    policy = Policy(1, 1)
    params = policy.init_params(0)
    batch = rollout(env, policy, params, 50, 50, seed=6, sigma=0.3)
    transitions = {
        "s": batch.states[:, :-1].reshape(-1, 1),
        "a": batch.actions.reshape(-1, 1),
        "s_next": batch.states[:, 1:].reshape(-1, 1),
        "r": batch.rewards.reshape(-1),
        "c": batch.costs.reshape(-1),
    }
    wm = WorldModel(1, 1)
    wparams = wm.init_params(2)
    _, stats = world_model_train(wm, wparams, transitions,
                                 WorldModelTrainConfig(epochs=20, lr=3e-3),
                                 seed=2)
    assert np.isfinite(stats["holdout_cost_mse"])


def test_perfect_model_identity_with_real_env():
    cfg = fast_cfg(algorithm="mb-cgpo", epochs=1, episode_length=50,
                   horizon=50)
    env = build_env(cfg)
    state_a = init_train_state(cfg, env)
    state_b = init_train_state(cfg, env)
    cgpo_iteration(state_a, env, cfg)
    mb_cgpo_iteration(state_b, env, cfg, model_env_override=env)
    np.testing.assert_allclose(state_b.policy_params, state_a.policy_params,
                               rtol=1e-12, atol=1e-15)


def test_mb_cgpo_runs_on_floor_env():
    cfg = fast_cfg(algorithm="mb-cgpo", env="floor-function", epochs=2,
                   episode_length=30, horizon=30, wm_epochs=3)
    result = run_training(cfg)
    assert len(result.records) == 2
    assert "wm_holdout_state_mse" in result.records[-1]
