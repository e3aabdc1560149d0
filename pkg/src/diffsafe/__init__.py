"""Trust-region constrained policy optimization on differentiable
environments, with first-order estimation of finite-horizon constraints."""

__version__ = "0.1.0"

from .config import RunConfig
from .envs import EnvSpec, FloorFunctionEnv, FunctionEnv, PointMassEnv, make_env
from .gradients import (Batch, GradPair, abe_predict, bptt_grads,
                        first_order_predict, measure, relative_error, rollout,
                        shac_grads, zobg_grads)
from .harness import (AblationConfig, MetricsConfig, ablate_estimation,
                      ablate_gradient, ablate_radius, conv_steps, vio_ratio)
from .nets import MLP, FiniteHorizonCritic, NetConfig, Policy, WorldModel
from .subproblem import (Case, SubproblemInput, SubproblemSolution, classify,
                         kkt_residuals, solve_dual, solve_step)
from .trainer import (RadiusController, RatioPair, TrainState, cgpo_iteration,
                      compute_ratios, critic_update, lagrangian_iteration,
                      mb_cgpo_iteration, run_training, td_lambda_targets,
                      td_lambda_weights, update_radius, world_model_train)

__all__ = [
    "__version__", "RunConfig", "EnvSpec", "FunctionEnv", "FloorFunctionEnv",
    "PointMassEnv", "make_env", "Batch", "GradPair", "rollout", "measure",
    "bptt_grads", "shac_grads", "zobg_grads", "first_order_predict",
    "abe_predict", "relative_error", "MLP", "NetConfig", "Policy",
    "FiniteHorizonCritic", "WorldModel", "Case", "SubproblemInput",
    "SubproblemSolution", "classify", "solve_dual", "solve_step",
    "kkt_residuals", "RadiusController", "RatioPair", "TrainState",
    "compute_ratios", "update_radius", "td_lambda_weights",
    "td_lambda_targets", "critic_update", "cgpo_iteration",
    "lagrangian_iteration", "mb_cgpo_iteration", "world_model_train",
    "run_training", "AblationConfig", "MetricsConfig", "ablate_estimation",
    "ablate_gradient", "ablate_radius", "conv_steps", "vio_ratio",
]
