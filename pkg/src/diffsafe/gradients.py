"""Trajectory rollouts and the four gradient/prediction routes.

Gradient conventions: every returned gradient pair (g, q) points in the
ascent direction of the measured mean return and mean cumulative cost; the
windowed surrogates below are maximization targets.  All reductions over
trajectories run batch-major through numpy so results do not depend on any
worker configuration.

Seed split scheme: a rollout with seed s draws initial states from
default_rng(s) (via env.reset) and exploration noise from default_rng([s, 1]).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import MLP, NetConfig
from .optim import fit_mse


class RolloutError(RuntimeError):
    pass


@dataclass
class Batch:
    """N same-length trajectories: states (N, T+1, d_s), actions (N, T, d_a),
    rewards/costs (N, T).  For stochastic rollouts the pre-noise action means
    and the noise scale are kept so densities can be evaluated later."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    seed: int
    sigma: float = 0.0
    action_means: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def j_r(self) -> np.ndarray:
        return self.rewards.sum(axis=1)

    @property
    def j_c(self) -> np.ndarray:
        return self.costs.sum(axis=1)


@dataclass
class GradPair:
    """Ascent gradients of mean return (g) and mean cumulative cost (q),
    aligned with the policy parameter vector, plus the measured values and
    the constraint gap c = j_c - cost_limit."""

    g: np.ndarray
    q: np.ndarray
    c: float
    j_r: float
    j_c: float
    loss_r: float = 0.0
    loss_c: float = 0.0


def rollout(env, policy, params: np.ndarray, n: int, horizon: int,
            seed: int, sigma: float = 0.0) -> Batch:
    """Roll n trajectories of the given horizon; deterministic given seed.

    With sigma > 0 the executed action is policy(s) + sigma * xi with xi
    standard normal (the environment clamps internally)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d_s = env.spec.state_dim
    d_a = env.spec.action_dim
    states = np.empty((n, horizon + 1, d_s))
    actions = np.empty((n, horizon, d_a))
    means = np.empty((n, horizon, d_a)) if sigma > 0 else None
    rewards = np.empty((n, horizon))
    costs = np.empty((n, horizon))

    states[:, 0] = env.reset(seed, n)
    noise_rng = np.random.default_rng([seed, 1]) if sigma > 0 else None
    s = states[:, 0]
    for t in range(horizon):
        a = policy.forward(params, s)
        if sigma > 0:
            means[:, t] = a
            a = a + sigma * noise_rng.standard_normal(a.shape)
        res = env.step(s, a)
        if not np.all(np.isfinite(res.next_state)):
            raise RolloutError(f"non-finite state produced at step {t}")
        actions[:, t] = a
        rewards[:, t] = res.reward
        costs[:, t] = res.cost
        s = res.next_state
        states[:, t + 1] = s
    return Batch(states, actions, rewards, costs, seed, sigma, means)


def measure(env, policy, params: np.ndarray, n: int, horizon: int, seed: int):
    """Mean (J_R, J_C) of a deterministic evaluation rollout."""
    b = rollout(env, policy, params, n, horizon, seed)
    return float(b.j_r.mean()), float(b.j_c.mean())


# ---------------------------------------------------------------------------
# pathwise (first-order) gradients through the dynamics
# ---------------------------------------------------------------------------

def _window_adjoint(batch: Batch, env, policy, params: np.ndarray,
                    t0: int, h: int,
                    critic_r=None, critic_r_params=None,
                    critic_c=None, critic_c_params=None):
    """Reverse sweep over the window [t0, t0+h] of a rolled-out batch.

    The window surrogates are the batch means of the in-window signal sums
    plus a terminal critic value; their gradients are assembled from the
    step Jacobians in reverse time order, truncated at the window start.
    Returns (g, q, loss_r, loss_c).
    """
    n, T = batch.n, batch.horizon
    if not (0 <= t0 and 1 <= h and t0 + h <= T):
        raise ValueError(f"invalid window (t0={t0}, h={h}) for horizon {T}")
    if not env.spec.differentiable:
        raise RuntimeError("pathwise gradients need a differentiable environment")

    d_s = env.spec.state_dim
    sT = batch.states[:, t0 + h]
    if critic_r is not None:
        v_r = critic_r.forward(critic_r_params, sT, np.full(n, t0 + h))
        sbar_r, _ = critic_r.backward(critic_r_params, sT, np.full(n, t0 + h),
                                      np.full(n, 1.0 / n))
    else:
        v_r = np.zeros(n)
        sbar_r = np.zeros((n, d_s))
    if critic_c is not None:
        v_c = critic_c.forward(critic_c_params, sT, np.full(n, t0 + h))
        sbar_c, _ = critic_c.backward(critic_c_params, sT, np.full(n, t0 + h),
                                      np.full(n, 1.0 / n))
    else:
        v_c = np.zeros(n)
        sbar_c = np.zeros((n, d_s))

    loss_r = float(np.mean(batch.rewards[:, t0:t0 + h].sum(axis=1) + v_r))
    loss_c = float(np.mean(batch.costs[:, t0:t0 + h].sum(axis=1) + v_c))

    g = np.zeros(policy.n_params)
    q = np.zeros(policy.n_params)
    inv_n = 1.0 / n
    for t in range(t0 + h - 1, t0 - 1, -1):
        s_t = batch.states[:, t]
        a_t = batch.actions[:, t]
        jac = env.jacobians(s_t, a_t)
        # adjoint of the executed action
        abar_r = inv_n * jac.dr_da + np.einsum("ns,nsa->na", sbar_r, jac.df_da)
        abar_c = inv_n * jac.dc_da + np.einsum("ns,nsa->na", sbar_c, jac.df_da)
        # one shared forward pass through the policy, two reverse passes
        z, cache = policy.net.forward(params, s_t)
        low, high = policy.config.output_squash
        d_squash = (high - low) * 0.5 * (1.0 - np.tanh(z) ** 2)
        dstate_r, dp_r = policy.net.backward(cache, abar_r * d_squash)
        dstate_c, dp_c = policy.net.backward(cache, abar_c * d_squash)
        g += dp_r
        q += dp_c
        sbar_r = inv_n * jac.dr_ds + np.einsum("ns,nst->nt", sbar_r, jac.df_ds) + dstate_r
        sbar_c = inv_n * jac.dc_ds + np.einsum("ns,nst->nt", sbar_c, jac.df_ds) + dstate_c
    return g, q, loss_r, loss_c


def bptt_grads(batch: Batch, env, policy, params: np.ndarray,
               cost_limit: float) -> GradPair:
    """Full-horizon trajectory gradients: exact ascent gradients of the batch
    mean return and mean cumulative cost."""
    g, q, loss_r, loss_c = _window_adjoint(batch, env, policy, params,
                                           t0=0, h=batch.horizon)
    j_r = float(batch.j_r.mean())
    j_c = float(batch.j_c.mean())
    return GradPair(g, q, j_c - cost_limit, j_r, j_c, loss_r, loss_c)


def shac_grads(batch: Batch, env, policy, params: np.ndarray,
               critic_r, critic_r_params, critic_c, critic_c_params,
               t0: int, h: int, cost_limit: float) -> GradPair:
    """Short-horizon gradients: in-window signal sums bootstrapped by the
    matching critic at the window end, truncated at the window start."""
    g, q, loss_r, loss_c = _window_adjoint(
        batch, env, policy, params, t0, h,
        critic_r, critic_r_params, critic_c, critic_c_params)
    j_r = float(batch.j_r.mean())
    j_c = float(batch.j_c.mean())
    return GradPair(g, q, j_c - cost_limit, j_r, j_c, loss_r, loss_c)


# ---------------------------------------------------------------------------
# zeroth-order (score function) gradients
# ---------------------------------------------------------------------------

def zobg_grads(env, policy, params: np.ndarray, n: int, horizon: int,
               sigma: float, seed: int, cost_limit: float,
               baseline: bool = False) -> GradPair:
    """Score-function estimate of (g, q) from n Gaussian-perturbed rollouts.

    g ~ (1/n) sum_i [sum_t d_theta log pi(a_t|s_t)] * R(tau_i); optionally the
    batch-mean return/cost is subtracted from the per-trajectory weights."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if baseline and n < 2:
        raise ValueError("baseline subtraction needs n >= 2")
    batch = rollout(env, policy, params, n, horizon, seed, sigma=sigma)
    w_r = batch.j_r.copy()
    w_c = batch.j_c.copy()
    if baseline:
        w_r -= w_r.mean()
        w_c -= w_c.mean()
    g = np.zeros(policy.n_params)
    q = np.zeros(policy.n_params)
    inv_n = 1.0 / n
    for t in range(horizon):
        s_t = batch.states[:, t]
        score_dir = (batch.actions[:, t] - batch.action_means[:, t]) / sigma ** 2
        z, cache = policy.net.forward(params, s_t)
        low, high = policy.config.output_squash
        d_squash = (high - low) * 0.5 * (1.0 - np.tanh(z) ** 2)
        _, dp_r = policy.net.backward(cache, inv_n * w_r[:, None] * score_dir * d_squash)
        _, dp_c = policy.net.backward(cache, inv_n * w_c[:, None] * score_dir * d_squash)
        g += dp_r
        q += dp_c
    j_r = float(batch.j_r.mean())
    j_c = float(batch.j_c.mean())
    return GradPair(g, q, j_c - cost_limit, j_r, j_c)


# ---------------------------------------------------------------------------
# value prediction after a parameter step
# ---------------------------------------------------------------------------

def first_order_predict(j0: float, grad: np.ndarray, delta: np.ndarray) -> float:
    """Predict J(theta + delta) from the measured J(theta) and its gradient."""
    grad = np.asarray(grad, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if grad.shape != delta.shape:
        raise ValueError(f"length mismatch: grad {grad.shape} vs delta {delta.shape}")
    return float(j0 + delta @ grad)


def discounted_cost_to_go(costs: np.ndarray, gamma: float) -> np.ndarray:
    """Per (trajectory, t) sum_{u>=t} gamma^(u-t) * c_u."""
    n, T = costs.shape
    out = np.empty_like(costs)
    acc = np.zeros(n)
    for t in range(T - 1, -1, -1):
        acc = costs[:, t] + gamma * acc
        out[:, t] = acc
    return out


def fit_discounted_critic(batch: Batch, gamma: float, hidden=(64, 64),
                          epochs: int = 30, lr: float = 1e-2,
                          minibatch: int = 256, seed: int = 0):
    """Fit a state-only baseline V(s) to the discounted cost-to-go of a batch.
    Returns (net, params)."""
    d_s = batch.states.shape[2]
    net = MLP(NetConfig(d_s, 1, tuple(hidden)))
    params = net.init_params(seed)
    xs = batch.states[:, :-1].reshape(-1, d_s)
    ys = discounted_cost_to_go(batch.costs, gamma).reshape(-1)
    params, _ = fit_mse(net, params, xs, ys, epochs=epochs, lr=lr,
                        minibatch=minibatch, seed=seed)
    return net, params


def advantage_correction(batch: Batch, policy, old_params: np.ndarray,
                         new_params: np.ndarray, gamma: float,
                         critic_net, critic_params) -> np.ndarray:
    """Per-trajectory importance-weighted advantage corrections.

    For each visited (s, a): ratio of Gaussian densities of the executed
    action under the new and old policy means, times the discounted-cost
    advantage (cost-to-go minus critic baseline), accumulated with gamma^t
    weights.  The mean over trajectories estimates the discounted-constraint
    change scaled by 1/(1-gamma)."""
    if batch.sigma <= 0 or batch.action_means is None:
        raise ValueError("batch must come from a stochastic rollout")
    if gamma >= 1.0:
        raise ValueError("gamma must be < 1")
    n, T = batch.n, batch.horizon
    d_s = batch.states.shape[2]
    flat_states = batch.states[:, :-1].reshape(-1, d_s)
    mu_new = policy.forward(new_params, flat_states).reshape(n, T, -1)
    mu_old = batch.action_means
    a = batch.actions
    log_ratio = ((a - mu_old) ** 2 - (a - mu_new) ** 2).sum(axis=2) / (2 * batch.sigma ** 2)
    ratio = np.exp(log_ratio)
    ctg = discounted_cost_to_go(batch.costs, gamma)
    values, _ = critic_net.forward(critic_params, flat_states)
    adv = ctg - values[:, 0].reshape(n, T)
    discounts = gamma ** np.arange(T)
    return (discounts[None, :] * ratio * adv).sum(axis=1)


def abe_predict(batch: Batch, policy, old_params: np.ndarray,
                new_params: np.ndarray, gamma: float,
                critic_net, critic_params, j0: float | None = None) -> float:
    """Advantage-based estimate of the constraint value at new_params.

    j0 defaults to the batch's own measured mean cost; callers comparing
    against an externally measured value should pass that measurement so the
    estimators share a base."""
    base = float(batch.j_c.mean()) if j0 is None else float(j0)
    corr = advantage_correction(batch, policy, old_params, new_params, gamma,
                                critic_net, critic_params)
    return base + float(corr.mean())


def relative_error(j_true_new: float, j_est_new: float, j_true_old: float,
                   tol: float = 1e-12) -> float:
    """|J - Jhat| / |J_new - J_old|; nan marks a degenerate denominator so
    aggregators can exclude and count the sample."""
    denom = abs(j_true_new - j_true_old)
    if denom <= tol:
        return float("nan")
    return abs(j_true_new - j_est_new) / denom
