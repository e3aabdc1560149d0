"""Command-line entry point: train / ablate / eval.

Config precedence is flag > file > default (flags are --set key=value pairs
plus a few shortcuts).  Each run writes out_dir/<timestamp>-<confighash>/
containing metrics.jsonl, checkpoints/ and a manifest written atomically at
run end.  DIFFSAFE_OUT_DIR overrides out_dir.  Exit codes: 0 success,
2 invalid config, 3 numeric divergence, 4 corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, coerce_override
from .envs import make_env
from .gradients import RolloutError, rollout
from .harness import AblationConfig, MetricsConfig, ablate_estimation, \
    ablate_gradient, ablate_radius
from .nets import Policy
from .optim import TrainingDiverged
from .runio import (CheckpointError, append_jsonl, atomic_write_json,
                    load_checkpoint, save_checkpoint)
from .trainer import build_env, run_training

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4


def _load_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        overrides[key] = coerce_override(key, raw)
    for key in ("seed", "epochs", "out_dir"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            overrides[key] = val
    if os.environ.get("DIFFSAFE_OUT_DIR"):
        overrides["out_dir"] = os.environ["DIFFSAFE_OUT_DIR"]
    if args.config:
        return RunConfig.load(args.config, overrides)
    return RunConfig.from_dict(overrides)


def _make_run_dir(cfg: RunConfig) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = os.path.join(cfg.out_dir, f"{stamp}-{cfg.config_hash()}")
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    return run_dir


def _checkpoint_meta(cfg: RunConfig, env, state, iteration: int) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "env_spec": env.spec.to_dict(),
        "policy_config": state.policy.config.to_dict(),
        "policy_shape_descriptor": state.policy.shape_descriptor,
        "critic_config": state.critic_r.config.to_dict(),
        "iteration": iteration,
    }


def _save_state_checkpoint(path, cfg, env, state):
    params = {
        "policy": state.policy_params,
        "critic_r": state.critic_r_params,
        "critic_c": state.critic_c_params,
    }
    if state.world_model_params is not None:
        params["world_model"] = state.world_model_params
    save_checkpoint(path, params, _checkpoint_meta(cfg, env, state, state.iteration))


def cmd_train(args) -> int:
    try:
        cfg = _load_config(args)
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run_dir = _make_run_dir(cfg)
    metrics_path = os.path.join(run_dir, "metrics.jsonl")
    env = build_env(cfg)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    print(f"run directory: {run_dir}")

    holder = {}

    def hook(record):
        append_jsonl(metrics_path, record)
        if cfg.checkpoint_every and (record["k"] + 1) % cfg.checkpoint_every == 0:
            _save_state_checkpoint(
                os.path.join(run_dir, "checkpoints", f"ckpt_{record['k'] + 1:06d}.npz"),
                cfg, env, holder["state"])

    try:
        from .trainer import init_train_state  # deferred: hook needs the live state
        result_env = build_env(cfg)
        state = init_train_state(cfg, result_env)
        holder["state"] = state
        result = _run_with_state(cfg, state, result_env, hook)
    except TrainingDiverged as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except RolloutError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    _save_state_checkpoint(os.path.join(run_dir, "checkpoints", "ckpt_final.npz"),
                           cfg, env, result.state)
    last = result.records[-1]
    atomic_write_json(os.path.join(run_dir, "manifest.json"), {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "workers": args.workers,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "final": {"k": last["k"], "j_r": last["j_r"], "j_c": last["j_c"],
                  "b": last["b"], "feasible": last["j_c"] <= last["b"],
                  "env_steps": last["env_steps"]},
    })
    print(f"finished: J_R={last['j_r']:.4f} J_C={last['j_c']:.4f} "
          f"b={last['b']} env_steps={last['env_steps']}")
    return EXIT_OK


def _run_with_state(cfg, state, env, hook):
    """run_training with an externally created state (so checkpoint hooks can
    reach the live parameters)."""
    from .trainer import (TrainResult, cgpo_iteration, lagrangian_iteration,
                          mb_cgpo_iteration)
    for _ in range(cfg.epochs):
        if cfg.algorithm == "cgpo":
            record = cgpo_iteration(state, env, cfg)
        elif cfg.algorithm == "bptt-lag":
            record = lagrangian_iteration(state, env, cfg, engine="bptt")
        elif cfg.algorithm == "shac-lag":
            record = lagrangian_iteration(state, env, cfg, engine="shac")
        elif cfg.algorithm == "mb-cgpo":
            record = mb_cgpo_iteration(state, env, cfg)
        else:
            raise ConfigError("algorithm", f"unknown algorithm '{cfg.algorithm}'")
        hook(record)
    return TrainResult(state, state.metrics, {})


def cmd_ablate(args) -> int:
    try:
        cfg = _load_config(args)
        ab_overrides = {}
        for item in args.ablate_set or []:
            key, raw = item.split("=", 1)
            ab_overrides[key] = json.loads(raw) if raw.startswith("[") else raw
        ab = AblationConfig(env=cfg.env, **_coerce_ablation(ab_overrides))
    except (ConfigError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run_dir = _make_run_dir(cfg)
    try:
        if args.kind == "estimation":
            rows, header = ablate_estimation(
                cfg, ab, csv_path=os.path.join(run_dir, "estimation_errors.csv"))
        elif args.kind == "gradient":
            rows, header = ablate_gradient(
                ab, base_seed=cfg.seed,
                csv_path=os.path.join(run_dir, "gradient_errors.csv"))
        else:
            rows, header = ablate_radius(
                cfg, seeds=tuple(range(cfg.seed, cfg.seed + args.pairs)),
                csv_path=os.path.join(run_dir, "radius_ablation.csv"))
    except (TrainingDiverged, RolloutError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    atomic_write_json(os.path.join(run_dir, "manifest.json"), {
        "config": cfg.to_dict(), "config_hash": cfg.config_hash(),
        "version": __version__, "kind": args.kind, "rows": len(rows),
    })
    print(f"wrote {len(rows)} rows to {run_dir}")
    return EXIT_OK


def _coerce_ablation(overrides: dict) -> dict:
    out = {}
    defaults = AblationConfig()
    for key, raw in overrides.items():
        if not hasattr(defaults, key):
            raise ConfigError(key, "unknown ablation field")
        current = getattr(defaults, key)
        if isinstance(current, tuple):
            vals = raw if isinstance(raw, list) else str(raw).split(",")
            cast = float if any("." in str(v) or "e" in str(v).lower()
                                for v in vals) else int
            out[key] = tuple(cast(v) for v in vals)
        elif isinstance(current, int):
            out[key] = int(raw)
        elif isinstance(current, float):
            out[key] = float(raw)
        else:
            out[key] = raw
    return out


def cmd_eval(args) -> int:
    try:
        params, meta = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    env_cfg = meta["env_spec"]
    env_name = args.env or env_cfg["name"]
    env = make_env(env_name, horizon=env_cfg["horizon"],
                   cost_limit=env_cfg["cost_limit"],
                   init_low=env_cfg["init_low"], init_high=env_cfg["init_high"])
    pol_cfg = meta["policy_config"]
    squash = pol_cfg["output_squash"]
    policy = Policy(pol_cfg["input_dim"], pol_cfg["output_dim"],
                    hidden=tuple(pol_cfg["hidden"]),
                    action_low=squash[0], action_high=squash[1])
    if params["policy"].shape[0] != policy.n_params:
        print(f"error: {args.checkpoint}: policy parameter count mismatch",
              file=sys.stderr)
        return EXIT_CHECKPOINT
    batch = rollout(env, policy, params["policy"], args.episodes,
                    env.spec.horizon, args.seed)
    summary = {
        "episodes": args.episodes,
        "seed": args.seed,
        "j_r_mean": float(batch.j_r.mean()),
        "j_r_std": float(batch.j_r.std()),
        "j_c_mean": float(batch.j_c.mean()),
        "j_c_std": float(batch.j_c.std()),
        "cost_limit": env.spec.cost_limit,
        "feasible": bool(batch.j_c.mean() <= env.spec.cost_limit),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffsafe",
        description="trust-region constrained policy optimization on "
                    "differentiable environments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field (repeatable)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--epochs", type=int, default=None)
    common.add_argument("--out-dir", dest="out_dir", default=None)
    common.add_argument("--workers", type=int, default=os.cpu_count(),
                        help="reserved parallelism bound (results are "
                             "worker-count independent)")

    p_train = sub.add_parser("train", parents=[common], help="run training")
    p_train.set_defaults(func=cmd_train)

    p_ablate = sub.add_parser("ablate", parents=[common], help="run a study")
    p_ablate.add_argument("kind", choices=["estimation", "gradient", "radius"])
    p_ablate.add_argument("--ablate-set", action="append", metavar="KEY=VALUE",
                          help="override an ablation field (repeatable)")
    p_ablate.add_argument("--pairs", type=int, default=5,
                          help="seed pairs for the radius study")
    p_ablate.set_defaults(func=cmd_ablate)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--env", default=None)
    p_eval.add_argument("--episodes", type=int, default=16)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
