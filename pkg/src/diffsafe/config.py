"""Run configuration: one declarative JSON file drives training, ablations
and evaluation.  Precedence is flag > file > default; cross-field validity is
checked once at load time and violations name the offending field.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"config field '{field_name}': {message}")


_ALGORITHMS = ("cgpo", "bptt-lag", "shac-lag", "mb-cgpo")
_ENVS = ("function", "floor-function", "point-mass")


@dataclass(frozen=True)
class RunConfig:
    env: str = "function"
    algorithm: str = "cgpo"
    epochs: int = 100
    num_envs: int = 8
    episode_length: int = 100
    horizon: int = 100
    delta_init: float = 1e-3
    delta_lower: float = 1e-4
    delta_upper: float = 1e-2
    beta1: float = 0.8
    beta2: float = 1.25
    eta1: float = 0.25
    eta2: float = 0.75
    critic_lr: float = 1e-3
    critic_epochs: int = 4
    critic_minibatch: int = 64
    td_lambda: float = 0.95
    gamma: float = 0.99
    sigma: float = 0.1
    cost_limit: float = 8.0
    seed: int = 0
    out_dir: str = "runs"
    # environment initial-state interval (the initial distribution is uniform
    # on it; equal endpoints pin a deterministic start)
    init_low: float = -1.0
    init_high: float = 1.0
    # network sizes
    policy_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)
    wm_hidden: tuple[int, ...] = (64, 64)
    # lagrangian baselines
    primal_lr: float = 1e-2
    dual_lr_scale: float = 1e-3
    # world model
    wm_epochs: int = 5
    wm_lr: float = 1e-3
    wm_minibatch: int = 256
    wm_buffer: int = 50_000
    # bookkeeping
    monitor_bounds: bool = True
    adaptive_radius: bool = True
    checkpoint_every: int = 50
    workers: int = 0  # reserved; batched numpy evaluation is worker-free

    def validate(self) -> "RunConfig":
        if self.env not in _ENVS:
            raise ConfigError("env", f"must be one of {_ENVS}")
        if self.algorithm not in _ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {_ALGORITHMS}")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.num_envs < 1:
            raise ConfigError("num_envs", "must be >= 1")
        if self.episode_length < 1:
            raise ConfigError("episode_length", "must be >= 1")
        if not 1 <= self.horizon <= self.episode_length:
            raise ConfigError("horizon", f"must satisfy 1 <= h <= episode_length "
                                         f"({self.horizon} vs {self.episode_length})")
        if not 0 < self.delta_lower <= self.delta_init <= self.delta_upper:
            raise ConfigError("delta_init",
                              "need 0 < delta_lower <= delta_init <= delta_upper")
        if not 0 < self.beta1 < 1:
            raise ConfigError("beta1", "must be in (0, 1)")
        if not self.beta2 > 1:
            raise ConfigError("beta2", "must be > 1")
        if not 0 < self.eta1 < self.eta2 < 1:
            raise ConfigError("eta1", "need 0 < eta1 < eta2 < 1")
        if not 0 <= self.td_lambda <= 1:
            raise ConfigError("td_lambda", "must be in [0, 1]")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma", "must be in (0, 1)")
        if self.sigma <= 0:
            raise ConfigError("sigma", "must be > 0")
        if self.init_low > self.init_high:
            raise ConfigError("init_low", "must be <= init_high")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("policy_hidden", "critic_hidden", "wm_hidden"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config field")
        fixed = dict(data)
        for key in ("policy_hidden", "critic_hidden", "wm_hidden"):
            if key in fixed:
                fixed[key] = tuple(int(v) for v in fixed[key])
        return cls(**fixed).validate()

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str, overrides: dict | None = None) -> "RunConfig":
        with open(path) as fh:
            data = json.load(fh)
        if overrides:
            data.update(overrides)
        return cls.from_dict(data)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


def coerce_override(field_name: str, raw: str):
    """Parse a 'key=value' CLI override against the RunConfig field types."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if field_name not in fields:
        raise ConfigError(field_name, "unknown config field")
    default = getattr(RunConfig(), field_name)
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(field_name, f"expected a boolean, got '{raw}'")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(","))
    return raw
