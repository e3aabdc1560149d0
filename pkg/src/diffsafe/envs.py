"""Analytic environments with exact per-step Jacobians.

Every environment here is a pure function of (state, action, seed): `step`
takes a batch of states and actions and returns the batch of successors
together with per-step rewards and costs, and `jacobians` returns the exact
partial derivatives of the transition and the reward/cost signals.  Rewards
and costs are evaluated at the pre-transition state.  All arrays are float64.

States are plain ndarrays of shape (n, state_dim); actions (n, action_dim).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment, serializable to a run manifest."""

    name: str
    state_dim: int
    action_dim: int
    horizon: int
    cost_limit: float
    action_low: float
    action_high: float
    differentiable: bool
    init_low: float
    init_high: float

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.action_low < self.action_high:
            raise ValueError("action_low must be < action_high")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepResult:
    next_state: np.ndarray   # (n, state_dim)
    reward: np.ndarray       # (n,)
    cost: np.ndarray         # (n,)


@dataclass
class StepJacobians:
    """Exact partials of one step, batched over n samples.

    df_ds: (n, state_dim, state_dim); df_da: (n, state_dim, action_dim);
    the reward/cost rows are (n, state_dim) and (n, action_dim).
    """

    df_ds: np.ndarray
    df_da: np.ndarray
    dr_ds: np.ndarray
    dr_da: np.ndarray
    dc_ds: np.ndarray
    dc_da: np.ndarray


def _check_state(state: np.ndarray, dim: int) -> np.ndarray:
    state = np.atleast_2d(np.asarray(state, dtype=np.float64))
    if state.shape[1] != dim:
        raise ValueError(f"invalid state: expected dim {dim}, got {state.shape[1]}")
    if not np.all(np.isfinite(state)):
        raise ValueError("invalid state: non-finite components")
    return state


def _check_action(action: np.ndarray, dim: int) -> np.ndarray:
    action = np.atleast_2d(np.asarray(action, dtype=np.float64))
    if action.shape[1] != dim:
        raise ValueError(f"invalid action: expected dim {dim}, got {action.shape[1]}")
    return action


class FunctionEnv:
    """1-D position task: the agent moves on the x-axis and pays a running
    cost equal to the terrain value at its current position.

    Transition: x' = x + 0.2 * a with a clamped to [-1, 1].
    Reward and cost share the same terrain f(x) = (x/10)^2 + 0.1
    + 0.1*sin(8x/pi), so the constraint directly caps the return.
    """

    name = "function"

    def __init__(self, horizon: int = 100, cost_limit: float = 8.0,
                 init_low: float = -1.0, init_high: float = 1.0):
        self.spec = EnvSpec(
            name=self.name, state_dim=1, action_dim=1, horizon=horizon,
            cost_limit=cost_limit, action_low=-1.0, action_high=1.0,
            differentiable=True, init_low=init_low, init_high=init_high,
        )

    @staticmethod
    def terrain(x: np.ndarray) -> np.ndarray:
        return (x / 10.0) ** 2 + 0.1 + 0.1 * np.sin(8.0 * x / np.pi)

    @staticmethod
    def terrain_grad(x: np.ndarray) -> np.ndarray:
        return x / 50.0 + (0.8 / np.pi) * np.cos(8.0 * x / np.pi)

    def reset(self, seed: int, n: int = 1) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.uniform(self.spec.init_low, self.spec.init_high, size=(n, 1))

    def step(self, state: np.ndarray, action: np.ndarray) -> StepResult:
        s = _check_state(state, 1)
        a = np.clip(_check_action(action, 1), -1.0, 1.0)
        signal = self.terrain(s[:, 0])
        return StepResult(next_state=s + 0.2 * a, reward=signal, cost=signal.copy())

    def jacobians(self, state: np.ndarray, action: np.ndarray) -> StepJacobians:
        s = _check_state(state, 1)
        a = _check_action(action, 1)
        n = s.shape[0]
        # clamp kills the action gradient outside the bounds
        interior = ((a > -1.0) & (a < 1.0)).astype(np.float64)
        df_ds = np.ones((n, 1, 1))
        df_da = 0.2 * interior.reshape(n, 1, 1)
        d_signal = self.terrain_grad(s[:, 0]).reshape(n, 1)
        zeros_a = np.zeros((n, 1))
        return StepJacobians(df_ds=df_ds, df_da=df_da,
                             dr_ds=d_signal, dr_da=zeros_a,
                             dc_ds=d_signal.copy(), dc_da=zeros_a.copy())


class FloorFunctionEnv(FunctionEnv):
    """FunctionEnv with the quadratic term floored: the reward/cost terrain is
    piecewise-discontinuous, so no analytic Jacobians are available and
    gradients must come through a learned one-step model."""

    name = "floor-function"

    def __init__(self, horizon: int = 100, cost_limit: float = 8.0,
                 init_low: float = -1.0, init_high: float = 1.0):
        super().__init__(horizon, cost_limit, init_low, init_high)
        self.spec = EnvSpec(
            name=self.name, state_dim=1, action_dim=1, horizon=horizon,
            cost_limit=cost_limit, action_low=-1.0, action_high=1.0,
            differentiable=False, init_low=init_low, init_high=init_high,
        )

    @staticmethod
    def terrain(x: np.ndarray) -> np.ndarray:
        return (np.floor(x) / 10.0) ** 2 + 0.1 + 0.1 * np.sin(8.0 * x / np.pi)

    def jacobians(self, state, action):
        raise RuntimeError("no analytic Jacobians: environment is not differentiable")


class PointMassEnv:
    """2-state integrator (position, velocity) with a reward that prefers the
    origin and a cost that rewards excursion, so the cumulative-cost bound
    with a negative limit conflicts with the return.

    vel' = vel + 0.1*a; pos' = pos + 0.1*vel'; reward = 1 - pos^2;
    cost = -pos^2 (both at the pre-transition position).
    """

    name = "point-mass"

    def __init__(self, horizon: int = 100, cost_limit: float = -10.0,
                 init_low: float = -1.0, init_high: float = 1.0):
        self.spec = EnvSpec(
            name=self.name, state_dim=2, action_dim=1, horizon=horizon,
            cost_limit=cost_limit, action_low=-1.0, action_high=1.0,
            differentiable=True, init_low=init_low, init_high=init_high,
        )

    def reset(self, seed: int, n: int = 1) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.uniform(self.spec.init_low, self.spec.init_high, size=(n, 2))

    def step(self, state: np.ndarray, action: np.ndarray) -> StepResult:
        s = _check_state(state, 2)
        a = np.clip(_check_action(action, 1), -1.0, 1.0)
        pos, vel = s[:, 0], s[:, 1]
        vel_next = vel + 0.1 * a[:, 0]
        pos_next = pos + 0.1 * vel_next
        nxt = np.stack([pos_next, vel_next], axis=1)
        return StepResult(next_state=nxt, reward=1.0 - pos ** 2, cost=-(pos ** 2))

    def jacobians(self, state: np.ndarray, action: np.ndarray) -> StepJacobians:
        s = _check_state(state, 2)
        a = _check_action(action, 1)
        n = s.shape[0]
        interior = ((a > -1.0) & (a < 1.0)).astype(np.float64)[:, 0]
        df_ds = np.tile(np.array([[1.0, 0.1], [0.0, 1.0]]), (n, 1, 1))
        df_da = np.stack([0.01 * interior, 0.1 * interior], axis=1).reshape(n, 2, 1)
        dpos = -2.0 * s[:, 0]
        dr_ds = np.stack([dpos, np.zeros(n)], axis=1)
        zeros_a = np.zeros((n, 1))
        return StepJacobians(df_ds=df_ds, df_da=df_da,
                             dr_ds=dr_ds, dr_da=zeros_a,
                             dc_ds=dr_ds.copy(), dc_da=zeros_a.copy())


_REGISTRY = {
    FunctionEnv.name: FunctionEnv,
    FloorFunctionEnv.name: FloorFunctionEnv,
    PointMassEnv.name: PointMassEnv,
}


def make_env(name: str, **overrides):
    """Build an environment by its registry name ("function", "floor-function",
    "point-mass"), passing through constructor overrides."""
    if name not in _REGISTRY:
        raise ValueError(f"unknown environment '{name}'; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**overrides)
