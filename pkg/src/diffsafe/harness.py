"""Desk-scale experiment harness: the estimation-error study comparing the
first-order (gradient-based) predictor against the importance-weighted
advantage predictor across training stages, the pathwise-vs-score-function
gradient sweep over trajectory lengths and update magnitudes, the
adaptive-vs-fixed radius comparison, and the two evaluation metrics
(convergence steps, violation ratio).

Every table row carries the config hash; cells report the count of excluded
degenerate-denominator samples next to the aggregated relative errors.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .gradients import (abe_predict, bptt_grads, fit_discounted_critic,
                        first_order_predict, measure, relative_error, rollout,
                        zobg_grads)
from .nets import Policy
from .runio import write_csv
from .subproblem import SubproblemInput, solve_step
from .trainer import build_env, child_seed, run_training


# ---------------------------------------------------------------------------
# evaluation metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsConfig:
    conv_window: int = 10
    conv_threshold: float = 0.05   # fraction of the whole curve's return range
    critical_margin: float = 0.10  # fraction of |b| defining the critical area
    soft_margin: float = 0.02      # violation slack, fraction of |b|


def conv_steps(curve, b: float, cfg: MetricsConfig):
    """Earliest env-step count from which the return range inside the sliding
    window stays within the threshold and the cost at that point is feasible
    (soft margin included); None if the curve never settles feasibly.

    curve: sequence of (env_steps, return, cost), in training order."""
    if not len(curve):
        raise ValueError("curve is empty")
    steps = np.array([p[0] for p in curve], dtype=float)
    rets = np.array([p[1] for p in curve], dtype=float)
    costs = np.array([p[2] for p in curve], dtype=float)
    total_range = float(rets.max() - rets.min())
    tol = cfg.conv_threshold * total_range
    w = min(cfg.conv_window, len(curve))
    limit = b + cfg.soft_margin * abs(b)
    for i in range(len(curve) - w + 1):
        window = rets[i:i + w]
        if window.max() - window.min() <= tol and costs[i] <= limit:
            return int(steps[i])
    return None


@dataclass(frozen=True)
class VioRatio:
    percentage: float
    n_critical: int


def vio_ratio(history, cfg: MetricsConfig):
    """Violation ratio inside the safety-critical band.

    history: sequence of (J_C, b) per update.  Updates with |J_C - b| within
    critical_margin*|b| form the critical area; among them, the fraction with
    J_C above b plus the soft margin is returned as a percentage.  An empty
    critical area returns None (no near-threshold updates ever happened)."""
    if not len(history):
        raise ValueError("history is empty")
    jc = np.array([p[0] for p in history], dtype=float)
    bs = np.array([p[1] for p in history], dtype=float)
    critical = np.abs(jc - bs) <= cfg.critical_margin * np.abs(bs)
    n_crit = int(critical.sum())
    if n_crit == 0:
        return None
    violating = jc > bs + cfg.soft_margin * np.abs(bs)
    return VioRatio(100.0 * float((critical & violating).sum()) / n_crit, n_crit)


# ---------------------------------------------------------------------------
# shared ablation configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationConfig:
    env: str = "function"
    stages: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75)
    repetitions: int = 100
    step_norm: float = 0.01
    traj_lengths: tuple[int, ...] = (1, 5, 10, 50, 100, 200)
    delta_hats: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    direction_mode: str = "step"    # "step" (solver update) or "sphere"
    num_envs: int = 8
    zobg_samples: int = 64
    sigma: float = 0.1
    gamma: float = 0.99
    abe_critic_epochs: int = 20

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.step_norm <= 0:
            raise ValueError("step_norm must be > 0")
        if self.direction_mode not in ("step", "sphere"):
            raise ValueError("direction_mode must be 'step' or 'sphere'")


def _aggregate(errors: list[float]):
    arr = np.array(errors, dtype=float)
    good = arr[np.isfinite(arr)]
    excluded = int(arr.size - good.size)
    if good.size == 0:
        return float("nan"), float("nan"), 0, excluded
    return float(good.mean()), float(good.std()), int(good.size), excluded


# ---------------------------------------------------------------------------
# estimation-error study across training stages
# ---------------------------------------------------------------------------

def _step_direction(gp, delta_hat: float, target_norm: float,
                    rng: np.random.Generator) -> np.ndarray:
    sol = solve_step(SubproblemInput(gp.g, gp.q, gp.c, delta_hat))
    norm = float(np.linalg.norm(sol.delta))
    if norm < 1e-12:
        direction = gp.q / (np.linalg.norm(gp.q) + 1e-12)
    else:
        direction = sol.delta / norm
    return target_norm * direction


def ablate_estimation(run_cfg: RunConfig, ab: AblationConfig,
                      csv_path: str | None = None):
    """Relative errors of the two constraint predictors at fixed step length,
    measured at checkpoints taken during one training run.

    At each repetition the constraint and its exact trajectory gradient are
    measured on a fresh deterministic batch; the stepped policy is re-measured
    on the same initial states, so the first-order error is purely the
    curvature remainder.  The advantage route gets the same measured base
    value and a fresh stochastic batch with a freshly fit discounted baseline.
    Returns (rows, header); rows go to csv_path when given."""
    env = build_env(run_cfg)
    snap_iters = sorted({int(round(f * run_cfg.epochs)) for f in ab.stages})
    result = run_training(run_cfg, snapshot_iters=tuple(snap_iters))
    policy = result.state.policy

    header = ["stage_fraction", "estimator", "direction_mode", "mean_rel_err",
              "std_rel_err", "n", "n_excluded", "config_hash"]
    rows = []
    for frac, k in zip(sorted(set(ab.stages)), snap_iters):
        theta = result.snapshots[k]
        errs = {"first-order": [], "advantage": []}
        for rep in range(ab.repetitions):
            rep_seed = child_seed(run_cfg.seed, f"estimation-{k}", rep)
            batch = rollout(env, policy, theta, ab.num_envs,
                            run_cfg.episode_length, rep_seed)
            gp = bptt_grads(batch, env, policy, theta, run_cfg.cost_limit)
            rng = np.random.default_rng(child_seed(rep_seed, "dir"))
            if ab.direction_mode == "sphere":
                raw = rng.standard_normal(theta.size)
                delta = ab.step_norm * raw / np.linalg.norm(raw)
            else:
                delta = _step_direction(gp, ab.step_norm ** 2, ab.step_norm, rng)
            j_old = gp.j_c
            _, j_new = measure(env, policy, theta + delta, ab.num_envs,
                               run_cfg.episode_length, rep_seed)

            gbe = first_order_predict(j_old, gp.q, delta)
            errs["first-order"].append(relative_error(j_new, gbe, j_old))

            abe_batch = rollout(env, policy, theta, ab.num_envs,
                                run_cfg.episode_length,
                                child_seed(rep_seed, "abe"), sigma=ab.sigma)
            critic, critic_params = fit_discounted_critic(
                abe_batch, ab.gamma, epochs=ab.abe_critic_epochs,
                seed=child_seed(rep_seed, "abe-critic"))
            abe = abe_predict(abe_batch, policy, theta, theta + delta, ab.gamma,
                              critic, critic_params, j0=j_old)
            errs["advantage"].append(relative_error(j_new, abe, j_old))
        for name, errors in errs.items():
            mean, std, n, excl = _aggregate(errors)
            rows.append((frac, name, ab.direction_mode, mean, std, n, excl,
                         run_cfg.config_hash()))
    if csv_path:
        write_csv(csv_path, header, rows)
    return rows, header


# ---------------------------------------------------------------------------
# pathwise vs score-function sweep
# ---------------------------------------------------------------------------

def ablate_gradient(ab: AblationConfig, base_seed: int = 0,
                    csv_path: str | None = None):
    """Relative estimation error of the pathwise and score-function gradient
    routes over trajectory lengths and squared step sizes.

    A length-L cell rolls horizon L+1 so that L steps carry action influence
    (the leading cost term is policy-independent and cancels from every
    difference).  Each repetition draws a perturbed fresh policy, steps along
    the estimator's own constraint-ascent direction with |delta| =
    sqrt(delta_hat), and measures old/new values on a common seed."""
    env0 = build_env(RunConfig(env=ab.env))
    header = ["traj_len", "delta_hat", "estimator", "mean_rel_err",
              "std_rel_err", "n", "n_excluded"]
    rows = []
    for L in ab.traj_lengths:
        horizon = L + 1
        env = build_env(dataclasses.replace(
            RunConfig(env=ab.env), episode_length=horizon))
        policy = Policy(env.spec.state_dim, env.spec.action_dim)
        for delta_hat in ab.delta_hats:
            for estimator in ("fobg", "zobg"):
                errors = []
                for rep in range(ab.repetitions):
                    rep_seed = child_seed(base_seed, f"grad-{L}-{delta_hat}-{estimator}", rep)
                    rng = np.random.default_rng(child_seed(rep_seed, "theta"))
                    theta = policy.init_params(child_seed(rep_seed, "init"))
                    theta = theta + 0.05 * rng.standard_normal(theta.size)
                    j_r_old, j_old = measure(env, policy, theta, ab.num_envs,
                                             horizon, rep_seed)
                    if estimator == "fobg":
                        batch = rollout(env, policy, theta, ab.num_envs,
                                        horizon, rep_seed)
                        gp = bptt_grads(batch, env, policy, theta,
                                        env.spec.cost_limit)
                    else:
                        gp = zobg_grads(env, policy, theta, ab.zobg_samples,
                                        horizon, ab.sigma,
                                        child_seed(rep_seed, "zobg"),
                                        env.spec.cost_limit, baseline=True)
                    qnorm = float(np.linalg.norm(gp.q))
                    if qnorm < 1e-12:
                        errors.append(float("nan"))
                        continue
                    delta = math.sqrt(delta_hat) * gp.q / qnorm
                    _, j_new = measure(env, policy, theta + delta, ab.num_envs,
                                       horizon, rep_seed)
                    est = first_order_predict(j_old, gp.q, delta)
                    errors.append(relative_error(j_new, est, j_old))
                mean, std, n, excl = _aggregate(errors)
                rows.append((L, delta_hat, estimator, mean, std, n, excl))
    if csv_path:
        write_csv(csv_path, header, rows)
    return rows, header


# ---------------------------------------------------------------------------
# adaptive vs fixed trust-region radius
# ---------------------------------------------------------------------------

def ablate_radius(run_cfg: RunConfig, seeds: tuple[int, ...],
                  metrics_cfg: MetricsConfig = MetricsConfig(),
                  csv_path: str | None = None):
    """Paired-seed comparison of the adaptive radius controller against a
    fixed radius pinned at the adaptive run's upper bound.  Final return/cost
    are means over the last conv_window records.  Returns (rows, header)."""
    header = ["seed", "arm", "final_return", "final_cost", "constraint_gap",
              "vio_ratio_pct", "config_hash"]
    rows = []
    for seed in seeds:
        for arm in ("adaptive", "fixed"):
            cfg = dataclasses.replace(
                run_cfg, seed=seed,
                adaptive_radius=(arm == "adaptive"),
                delta_init=(run_cfg.delta_init if arm == "adaptive"
                            else run_cfg.delta_upper),
                monitor_bounds=False,
            )
            result = run_training(cfg)
            recs = result.records[-metrics_cfg.conv_window:]
            final_ret = float(np.mean([r["j_r"] for r in recs]))
            final_cost = float(np.mean([r["j_c"] for r in recs]))
            vr = vio_ratio([(r["j_c"], r["b"]) for r in result.records],
                           metrics_cfg)
            rows.append((seed, arm, final_ret, final_cost,
                         abs(final_cost - cfg.cost_limit),
                         vr.percentage if vr else float("nan"),
                         cfg.config_hash()))
    if csv_path:
        write_csv(csv_path, header, rows)
    return rows, header
