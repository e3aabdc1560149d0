"""Outer training loops: the trust-region constrained optimizer, its adaptive
radius controller, finite-horizon TD(lambda) critic updates, primal-dual
(Lagrangian) baselines, and the model-based variant that swaps the real
environment for a learned one-step model when computing gradients.

Per iteration: sample trajectories, form the gradient pair on the current
window, take exactly one of the three case steps, evaluate the old and new
policies on a common evaluation batch, update critics from the sampled
window, and rescale the trust-region radius from the reduction/toleration
ratios.  Steps are never rolled back; the radius only affects the next
iteration.
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .envs import StepJacobians, StepResult, make_env
from .gradients import (Batch, GradPair, bptt_grads, measure, rollout,
                        shac_grads)
from .nets import FiniteHorizonCritic, Policy, WorldModel
from .optim import Adam, TrainingDiverged, guarded_epochs
from .subproblem import Case, SubproblemInput, solve_step


def child_seed(root: int, tag: str, k: int = 0) -> int:
    """Deterministic seed stream: every random draw in a run descends from
    the single run seed through (tag, index) children."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(tag.encode()), int(k)])
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# radius controller
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadiusController:
    """Squared-radius trust region with shrink/grow control.

    delta_hat is compared against |step|^2; beta1/beta2 rescale it when the
    reduction ratio rho or the toleration ratio zeta crosses eta1/eta2."""

    delta_hat: float
    delta_lower: float
    delta_upper: float
    beta1: float = 0.8
    beta2: float = 1.25
    eta1: float = 0.25
    eta2: float = 0.75

    def __post_init__(self):
        if not (0 < self.delta_lower <= self.delta_hat <= self.delta_upper):
            raise ValueError("need 0 < delta_lower <= delta_hat <= delta_upper")
        if not (0 < self.beta1 < 1 < self.beta2):
            raise ValueError("need 0 < beta1 < 1 < beta2")
        if not (0 < self.eta1 < self.eta2 < 1):
            raise ValueError("need 0 < eta1 < eta2 < 1")


@dataclass(frozen=True)
class RatioPair:
    """rho compares actual vs predicted objective change; zeta compares the
    remaining constraint budget to the constraint estimation error.  A ratio
    whose denominator is below 1e-12 is flagged degenerate and treated as
    satisfying any threshold (perfect prediction must not shrink the radius)."""

    rho: float
    zeta: float
    rho_degenerate: bool = False
    zeta_degenerate: bool = False


def compute_ratios(jr_old: float, jr_new: float, jr_pred_new: float,
                   jc_new: float, jc_pred_new: float, b: float) -> RatioPair:
    denom_rho = jr_old - jr_pred_new
    if abs(denom_rho) <= 1e-12:
        rho, rho_deg = float("nan"), True
    else:
        rho, rho_deg = (jr_old - jr_new) / denom_rho, False
    denom_zeta = abs(jc_new - jc_pred_new)
    if denom_zeta <= 1e-12:
        zeta, zeta_deg = float("nan"), True
    else:
        zeta, zeta_deg = abs(b - jc_new) / denom_zeta, False
    return RatioPair(rho, zeta, rho_deg, zeta_deg)


def update_radius(ratios: RatioPair, ctrl: RadiusController) -> RadiusController:
    rho_low = (not ratios.rho_degenerate) and ratios.rho < ctrl.eta1
    zeta_low = (not ratios.zeta_degenerate) and ratios.zeta < ctrl.eta1
    rho_high = ratios.rho_degenerate or ratios.rho >= ctrl.eta2
    zeta_high = ratios.zeta_degenerate or ratios.zeta >= ctrl.eta2
    if rho_low or zeta_low:
        new = max(ctrl.beta1 * ctrl.delta_hat, ctrl.delta_lower)
    elif rho_high and zeta_high:
        new = min(ctrl.beta2 * ctrl.delta_hat, ctrl.delta_upper)
    else:
        new = ctrl.delta_hat
    return replace(ctrl, delta_hat=new)


# ---------------------------------------------------------------------------
# finite-horizon TD(lambda)
# ---------------------------------------------------------------------------

def td_lambda_weights(n_steps: int, lam: float) -> np.ndarray:
    """Weights over the 1..n_steps lookahead targets.  The final weight is
    the residual 1 - fsum(previous), which equals lambda^(n_steps-1) in reals
    and pins the correctly-rounded float sum at exactly 1."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    w = np.zeros(n_steps)
    if n_steps == 1:
        w[0] = 1.0
        return w
    w[:-1] = (1.0 - lam) * lam ** np.arange(n_steps - 1)
    w[-1] = 1.0 - math.fsum(w[:-1])
    return w


def td_lambda_targets(signal: np.ndarray, values: np.ndarray, lam: float) -> np.ndarray:
    """Per-(trajectory, t) lambda-mixed lookahead targets inside a window.

    signal: (N, h) per-step reward or cost; values: (N, h+1) critic values at
    the window states (values[:, j] evaluated at absolute time t0+j).  The
    n-step target from t sums n signals and bootstraps values[:, t+n]; the
    lambda mixture runs n = 1 .. h-t."""
    n_traj, h = signal.shape
    if values.shape != (n_traj, h + 1):
        raise ValueError("values must have shape (N, h+1)")
    targets = np.empty((n_traj, h))
    for t in range(h):
        steps = h - t
        partial = np.cumsum(signal[:, t:], axis=1)          # (N, steps)
        g_n = partial + values[:, t + 1:h + 1]              # n-step targets
        targets[:, t] = g_n @ td_lambda_weights(steps, lam)
    return targets


@dataclass(frozen=True)
class CriticUpdateConfig:
    lr: float = 1e-3
    epochs: int = 4
    minibatch: int = 64


def critic_update(critic: FiniteHorizonCritic, params: np.ndarray,
                  states: np.ndarray, ts: np.ndarray, targets: np.ndarray,
                  cfg: CriticUpdateConfig, seed: int = 0):
    """Minibatch-Adam regression of the critic onto TD targets; the epoch
    guard keeps the training-window loss non-increasing and aborts on a
    1e3 x blowup.  Returns (params, losses)."""
    states = np.asarray(states, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if not np.all(np.isfinite(targets)):
        raise ValueError("non-finite critic targets")
    n = states.shape[0]
    rng = np.random.default_rng(seed)
    opt = Adam(lr=cfg.lr)

    def full_loss(p):
        v = critic.forward(p, states, ts)
        return float(np.mean((v - targets) ** 2))

    def run_epoch(p, _epoch):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            v = critic.forward(p, states[idx], ts[idx])
            resid = v - targets[idx]
            _, grad = critic.backward(p, states[idx], ts[idx],
                                      2.0 * resid / idx.size)
            p = opt.step(p, grad)
        return p

    return guarded_epochs(params, full_loss, run_epoch, cfg.epochs)


def _fit_critic_on_window(critic, params, batch: Batch, t0: int, h: int,
                          signal: np.ndarray, lam: float,
                          cfg: CriticUpdateConfig, seed: int):
    n = batch.n
    window_states = batch.states[:, t0:t0 + h + 1]
    ts_grid = np.arange(t0, t0 + h + 1)
    values = np.stack([
        critic.forward(params, window_states[:, j], np.full(n, ts_grid[j]))
        for j in range(h + 1)
    ], axis=1)
    targets = td_lambda_targets(signal[:, t0:t0 + h], values, lam)
    flat_states = window_states[:, :h].reshape(n * h, -1)
    flat_ts = np.tile(ts_grid[:h], n)
    return critic_update(critic, params, flat_states, flat_ts,
                         targets.reshape(-1), cfg, seed)


# ---------------------------------------------------------------------------
# curvature probes for the worst-case bounds
# ---------------------------------------------------------------------------

def directional_curvature(measure_fn, theta: np.ndarray, delta: np.ndarray,
                          center_vals: np.ndarray, n_scales: int = 8,
                          safety: float = 2.0) -> np.ndarray:
    """Estimate of the largest |u' H u| along the step direction u=delta/|delta|
    via second-order central differences at n_scales step sizes up to |delta|,
    inflated by the safety factor.  measure_fn maps parameters to a vector of
    smooth scalars; one estimate is returned per component."""
    norm = float(np.linalg.norm(delta))
    if norm == 0:
        return np.zeros_like(np.asarray(center_vals, dtype=np.float64))
    u = delta / norm
    center = np.asarray(center_vals, dtype=np.float64)
    best = np.zeros_like(center)
    for j in range(1, n_scales + 1):
        s = norm * j / n_scales
        plus = np.asarray(measure_fn(theta + s * u), dtype=np.float64)
        minus = np.asarray(measure_fn(theta - s * u), dtype=np.float64)
        best = np.maximum(best, np.abs(plus - 2 * center + minus) / s ** 2)
    return safety * best


# ---------------------------------------------------------------------------
# training state and iterations
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    policy: Policy
    policy_params: np.ndarray
    critic_r: FiniteHorizonCritic
    critic_r_params: np.ndarray
    critic_c: FiniteHorizonCritic
    critic_c_params: np.ndarray
    radius: RadiusController
    iteration: int = 0
    window_start: int = 0
    lagrange_multiplier: float = 0.0
    env_steps: int = 0
    eval_steps: int = 0
    world_model: WorldModel | None = None
    world_model_params: np.ndarray | None = None
    replay: dict | None = None
    metrics: list = field(default_factory=list)


def init_train_state(cfg, env) -> TrainState:
    policy = Policy(env.spec.state_dim, env.spec.action_dim,
                    hidden=tuple(cfg.policy_hidden),
                    action_low=env.spec.action_low, action_high=env.spec.action_high)
    critic_r = FiniteHorizonCritic(env.spec.state_dim, cfg.episode_length,
                                   hidden=tuple(cfg.critic_hidden))
    critic_c = FiniteHorizonCritic(env.spec.state_dim, cfg.episode_length,
                                   hidden=tuple(cfg.critic_hidden))
    state = TrainState(
        policy=policy,
        policy_params=policy.init_params(child_seed(cfg.seed, "policy")),
        critic_r=critic_r,
        critic_r_params=critic_r.init_params(child_seed(cfg.seed, "critic-r")),
        critic_c=critic_c,
        critic_c_params=critic_c.init_params(child_seed(cfg.seed, "critic-c")),
        radius=RadiusController(cfg.delta_init, cfg.delta_lower, cfg.delta_upper,
                                cfg.beta1, cfg.beta2, cfg.eta1, cfg.eta2),
    )
    if cfg.algorithm == "mb-cgpo":
        state.world_model = WorldModel(env.spec.state_dim, env.spec.action_dim,
                                       hidden=tuple(cfg.wm_hidden))
        state.world_model_params = state.world_model.init_params(
            child_seed(cfg.seed, "wm"))
        state.replay = {k: [] for k in ("s", "a", "s_next", "r", "c")}
    return state


def _advance_window(state: TrainState, cfg):
    state.window_start += cfg.horizon
    if state.window_start >= cfg.episode_length:
        state.window_start = 0


def _eval_pair(env, state: TrainState, cfg, theta_old, theta_new):
    """Old/new policy values on one common evaluation batch (fixed seed, so
    across-iteration comparisons are smooth functions of the parameters)."""
    seed = child_seed(cfg.seed, "eval")
    jr_old, jc_old = measure(env, state.policy, theta_old, cfg.num_envs,
                             cfg.episode_length, seed)
    jr_new, jc_new = measure(env, state.policy, theta_new, cfg.num_envs,
                             cfg.episode_length, seed)
    state.eval_steps += 2 * cfg.num_envs * cfg.episode_length
    return seed, jr_old, jc_old, jr_new, jc_new


def _update_critics(state: TrainState, batch: Batch, t0: int, h: int, cfg):
    ccfg = CriticUpdateConfig(cfg.critic_lr, cfg.critic_epochs, cfg.critic_minibatch)
    k = state.iteration
    state.critic_r_params, _ = _fit_critic_on_window(
        state.critic_r, state.critic_r_params, batch, t0, h, batch.rewards,
        cfg.td_lambda, ccfg, child_seed(cfg.seed, "critic-r-fit", k))
    state.critic_c_params, _ = _fit_critic_on_window(
        state.critic_c, state.critic_c_params, batch, t0, h, batch.costs,
        cfg.td_lambda, ccfg, child_seed(cfg.seed, "critic-c-fit", k))


def cgpo_iteration(state: TrainState, env, cfg, grad_env=None) -> dict:
    """One constrained trust-region update (optionally differentiating through
    grad_env instead of the real environment).  Mutates state; returns the
    iteration record."""
    k = state.iteration
    t0 = state.window_start
    h = min(cfg.horizon, cfg.episode_length - t0)
    roll_env = grad_env if grad_env is not None else env
    theta = state.policy_params
    tic = time.perf_counter()

    batch = rollout(roll_env, state.policy, theta, cfg.num_envs,
                    cfg.episode_length, child_seed(cfg.seed, "rollout", k))
    gp = shac_grads(batch, roll_env, state.policy, theta,
                    state.critic_r, state.critic_r_params,
                    state.critic_c, state.critic_c_params,
                    t0, h, cfg.cost_limit)
    sol = solve_step(SubproblemInput(gp.g, gp.q, gp.c, state.radius.delta_hat))
    theta_new = theta + sol.delta

    _, jr_old, jc_old, jr_new, jc_new = _eval_pair(env, state, cfg, theta, theta_new)
    jr_pred = jr_old + float(sol.delta @ gp.g)
    jc_pred = jc_old + float(sol.delta @ gp.q)
    ratios = compute_ratios(jr_old, jr_new, jr_pred, jc_new, jc_pred,
                            cfg.cost_limit)

    record = {
        "k": k, "case": sol.case.value, "delta_hat": state.radius.delta_hat,
        "j_r": jr_new, "j_c": jc_new, "b": cfg.cost_limit,
        "j_r_old": jr_old, "j_c_old": jc_old,
        "j_r_pred": jr_pred, "j_c_pred": jc_pred,
        "rho": ratios.rho, "zeta": ratios.zeta,
        "lambda_star": sol.lambda_star, "nu_star": sol.nu_star,
        "step_norm_sq": float(sol.delta @ sol.delta),
    }

    if cfg.monitor_bounds and sol.case is Case.BOUNDARY and jc_old <= cfg.cost_limit:
        eval_seed = child_seed(cfg.seed, "eval")

        def measure_fn(p):
            state.eval_steps += 2 * cfg.num_envs * cfg.episode_length
            return np.array(measure(env, state.policy, p, cfg.num_envs,
                                    cfg.episode_length, eval_seed))

        eps = directional_curvature(measure_fn, theta, sol.delta,
                                    np.array([jr_old, jc_old]))
        slack = 1e-9 * (1.0 + abs(cfg.cost_limit))
        record.update({
            "monitored": True,
            "eps_r": float(eps[0]), "eps_c": float(eps[1]),
            "bound_r_ok": bool(jr_new - jr_old >=
                               -0.5 * eps[0] * state.radius.delta_hat - slack),
            "bound_c_ok": bool(jc_new <= cfg.cost_limit +
                               0.5 * eps[1] * state.radius.delta_hat + slack),
        })
    else:
        record["monitored"] = False

    _update_critics(state, batch, t0, h, cfg)
    if cfg.adaptive_radius:
        state.radius = update_radius(ratios, state.radius)
    state.policy_params = theta_new
    state.env_steps += cfg.num_envs * cfg.episode_length
    state.iteration += 1
    _advance_window(state, cfg)
    record["env_steps"] = state.env_steps
    record["eval_steps"] = state.eval_steps
    record["wall_time_s"] = time.perf_counter() - tic
    state.metrics.append(record)
    return record


def lagrangian_iteration(state: TrainState, env, cfg, engine: str) -> dict:
    """Primal-dual baseline: normalized ascent on g - lambda*q, dual ascent on
    the measured constraint gap.  engine selects full-horizon or windowed
    gradients."""
    if engine not in ("bptt", "shac"):
        raise ValueError("engine must be 'bptt' or 'shac'")
    k = state.iteration
    theta = state.policy_params
    tic = time.perf_counter()
    batch = rollout(env, state.policy, theta, cfg.num_envs,
                    cfg.episode_length, child_seed(cfg.seed, "rollout", k))
    if engine == "bptt":
        t0, h = 0, cfg.episode_length
        gp = bptt_grads(batch, env, state.policy, theta, cfg.cost_limit)
    else:
        t0 = state.window_start
        h = min(cfg.horizon, cfg.episode_length - t0)
        gp = shac_grads(batch, env, state.policy, theta,
                        state.critic_r, state.critic_r_params,
                        state.critic_c, state.critic_c_params,
                        t0, h, cfg.cost_limit)

    lam = state.lagrange_multiplier
    direction = gp.g - lam * gp.q
    step = cfg.primal_lr * direction / (np.linalg.norm(direction) + 1e-8)
    theta_new = theta + step
    lam_new = max(0.0, lam + cfg.dual_lr_scale * abs(cfg.cost_limit) * gp.c)

    _, jr_old, jc_old, jr_new, jc_new = _eval_pair(env, state, cfg, theta, theta_new)

    if engine == "shac":
        _update_critics(state, batch, t0, h, cfg)
        _advance_window(state, cfg)

    state.policy_params = theta_new
    state.lagrange_multiplier = lam_new
    state.env_steps += cfg.num_envs * cfg.episode_length
    state.iteration += 1
    record = {
        "k": k, "case": "lagrangian", "delta_hat": float("nan"),
        "j_r": jr_new, "j_c": jc_new, "b": cfg.cost_limit,
        "j_r_old": jr_old, "j_c_old": jc_old,
        "rho": float("nan"), "zeta": float("nan"),
        "lambda_star": float("nan"), "nu_star": float("nan"),
        "multiplier": lam_new,
        "step_norm_sq": float(step @ step),
        "monitored": False,
        "env_steps": state.env_steps, "eval_steps": state.eval_steps,
        "wall_time_s": time.perf_counter() - tic,
    }
    state.metrics.append(record)
    return record


# ---------------------------------------------------------------------------
# world model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorldModelTrainConfig:
    epochs: int = 5
    lr: float = 1e-3
    minibatch: int = 256
    holdout_frac: float = 0.1


def world_model_train(model: WorldModel, params: np.ndarray, transitions: dict,
                      cfg: WorldModelTrainConfig, seed: int = 0):
    """Fit the one-step model by summed MSE over (next state, reward, cost).

    Returns (params, stats) with per-epoch training losses and held-out MSEs
    per head; the holdout split is skipped for tiny datasets."""
    s = np.asarray(transitions["s"], dtype=np.float64)
    a = np.asarray(transitions["a"], dtype=np.float64)
    targets = model.head_targets(s, transitions["s_next"], transitions["r"],
                                 transitions["c"])
    n = s.shape[0]
    if n < 1:
        raise ValueError("need at least one transition")
    rng = np.random.default_rng(seed)
    inputs = np.concatenate([s, a], axis=1)
    if n >= 10 and cfg.holdout_frac > 0:
        order = rng.permutation(n)
        n_hold = max(1, int(cfg.holdout_frac * n))
        hold, train = order[:n_hold], order[n_hold:]
    else:
        hold, train = np.array([], dtype=int), np.arange(n)

    opt = Adam(lr=cfg.lr)

    def full_loss(p):
        out, _ = model.net.forward(p, inputs[train])
        return float(np.mean(np.sum((out - targets[train]) ** 2, axis=1)))

    def run_epoch(p, _epoch):
        order = rng.permutation(train.size)
        for start in range(0, train.size, cfg.minibatch):
            idx = train[order[start:start + cfg.minibatch]]
            out, cache = model.net.forward(p, inputs[idx])
            resid = out - targets[idx]
            _, grad = model.net.backward(cache, 2.0 * resid / idx.size)
            p = opt.step(p, grad)
        return p

    params, losses = guarded_epochs(params, full_loss, run_epoch, cfg.epochs)
    stats = {"losses": losses}
    if hold.size:
        out, _ = model.net.forward(params, inputs[hold])
        err = (out - targets[hold]) ** 2
        ds = model.state_dim
        stats["holdout_state_mse"] = float(err[:, :ds].mean())
        stats["holdout_reward_mse"] = float(err[:, ds].mean())
        stats["holdout_cost_mse"] = float(err[:, ds + 1].mean())
    return params, stats


class WorldModelEnv:
    """Presents a fitted one-step model through the environment interface so
    the rollout and adjoint machinery can run unchanged inside the model.
    Resets delegate to the real environment's initial distribution."""

    def __init__(self, model: WorldModel, params: np.ndarray, real_env):
        self.model = model
        self.params = params
        self._real = real_env
        self.spec = replace(real_env.spec, differentiable=True)

    def reset(self, seed: int, n: int = 1) -> np.ndarray:
        return self._real.reset(seed, n)

    def step(self, state, action) -> StepResult:
        s_next, r, c = self.model.forward(self.params, state, action)
        return StepResult(next_state=s_next, reward=r, cost=c)

    def jacobians(self, state, action) -> StepJacobians:
        df_ds, df_da, dr_ds, dr_da, dc_ds, dc_da = self.model.input_jacobians(
            self.params, state, action)
        return StepJacobians(df_ds, df_da, dr_ds, dr_da, dc_ds, dc_da)


def _push_replay(replay: dict, batch: Batch, cap: int):
    n, T, d_s = batch.states.shape[0], batch.horizon, batch.states.shape[2]
    replay["s"].append(batch.states[:, :-1].reshape(n * T, d_s))
    replay["a"].append(batch.actions.reshape(n * T, -1))
    replay["s_next"].append(batch.states[:, 1:].reshape(n * T, d_s))
    replay["r"].append(batch.rewards.reshape(-1))
    replay["c"].append(batch.costs.reshape(-1))
    total = sum(x.shape[0] for x in replay["s"])
    while total > cap and len(replay["s"]) > 1:
        total -= replay["s"][0].shape[0]
        for key in replay:
            replay[key].pop(0)


def _replay_arrays(replay: dict) -> dict:
    return {k: np.concatenate(v, axis=0) for k, v in replay.items()}


def mb_cgpo_iteration(state: TrainState, env, cfg, model_env_override=None) -> dict:
    """Model-based variant: collect real transitions with exploration noise,
    refit the one-step model, then run the identical three-case update with
    gradients taken through the model.  Evaluation, ratios and the radius
    update always use the real environment.  model_env_override (used by the
    perfect-model tests) skips fitting and differentiates through the given
    environment directly."""
    k = state.iteration
    wm_stats = {}
    if model_env_override is None:
        collect = rollout(env, state.policy, state.policy_params, cfg.num_envs,
                          cfg.episode_length, child_seed(cfg.seed, "mb-collect", k),
                          sigma=cfg.sigma)
        state.env_steps += cfg.num_envs * cfg.episode_length
        _push_replay(state.replay, collect, cfg.wm_buffer)
        wm_cfg = WorldModelTrainConfig(cfg.wm_epochs, cfg.wm_lr, cfg.wm_minibatch)
        if cfg.wm_epochs > 0:
            state.world_model_params, wm_stats = world_model_train(
                state.world_model, state.world_model_params,
                _replay_arrays(state.replay), wm_cfg,
                seed=child_seed(cfg.seed, "wm-fit", k))
        model_env = WorldModelEnv(state.world_model, state.world_model_params, env)
    else:
        model_env = model_env_override

    record = cgpo_iteration(state, env, cfg, grad_env=model_env)
    if "holdout_state_mse" in wm_stats:
        record["wm_holdout_state_mse"] = wm_stats["holdout_state_mse"]
        record["wm_holdout_cost_mse"] = wm_stats["holdout_cost_mse"]
    return record


# ---------------------------------------------------------------------------
# run driver
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    state: TrainState
    records: list
    snapshots: dict


def build_env(cfg):
    return make_env(cfg.env, horizon=cfg.episode_length, cost_limit=cfg.cost_limit,
                    init_low=cfg.init_low, init_high=cfg.init_high)


def run_training(cfg, record_hook=None, snapshot_iters=()) -> TrainResult:
    """Run cfg.epochs iterations of the configured algorithm.  record_hook is
    called with each iteration record; snapshot_iters collects copies of the
    policy parameters before those iterations (and None maps to the final)."""
    env = build_env(cfg)
    state = init_train_state(cfg, env)
    snapshots = {}
    for k in range(cfg.epochs):
        if k in snapshot_iters:
            snapshots[k] = state.policy_params.copy()
        if cfg.algorithm == "cgpo":
            record = cgpo_iteration(state, env, cfg)
        elif cfg.algorithm == "bptt-lag":
            record = lagrangian_iteration(state, env, cfg, engine="bptt")
        elif cfg.algorithm == "shac-lag":
            record = lagrangian_iteration(state, env, cfg, engine="shac")
        elif cfg.algorithm == "mb-cgpo":
            record = mb_cgpo_iteration(state, env, cfg)
        else:
            raise ValueError(f"unknown algorithm '{cfg.algorithm}'")
        if record_hook is not None:
            record_hook(record)
    return TrainResult(state, state.metrics, snapshots)
