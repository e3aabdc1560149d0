"""Small MLPs with explicit forward and backward passes.

Parameters live in flat float64 vectors so that optimizer steps, trust-region
norms and finite differences all operate on one array.  The layout of a flat
vector is described by the net's shape descriptor, an ordered list of
(layer, rows, cols, has_bias) entries; flatten/unflatten round-trips are
bit-exact.

Backward passes are exact reverse-mode derivatives of upstream^T * output and
return both the input gradient and the flat parameter gradient, summed over
the batch.  Only tanh hidden activations are supported: the surrounding
machinery assumes the networks are twice differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    # squash: None or (low, high) mapped through a scaled tanh
    output_squash: tuple[float, float] | None = None

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("dims must be positive")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation '{self.activation}'")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "output_squash": list(self.output_squash) if self.output_squash else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        squash = d.get("output_squash")
        return cls(
            input_dim=int(d["input_dim"]), output_dim=int(d["output_dim"]),
            hidden=tuple(int(h) for h in d["hidden"]),
            activation=d.get("activation", "tanh"),
            output_squash=tuple(squash) if squash else None,
        )


class MLP:
    """Fully connected net; tanh hidden layers, linear output."""

    def __init__(self, config: NetConfig):
        self.config = config
        dims = [config.input_dim, *config.hidden, config.output_dim]
        self.layer_dims = list(zip(dims[:-1], dims[1:]))
        # shape descriptor: (layer index, rows=fan_out, cols=fan_in, has_bias)
        self.shape_descriptor = [
            (i, d_out, d_in, True) for i, (d_in, d_out) in enumerate(self.layer_dims)
        ]
        self.n_params = sum(r * c + r for (_, r, c, _) in self.shape_descriptor)

    def init_params(self, seed: int, final_zero: bool = True,
                    gain: float = 1.0) -> np.ndarray:
        """Orthogonal-ish init (QR of a Gaussian draw) for hidden layers; the
        final layer is zeroed by default so fresh nets output exactly zero."""
        rng = np.random.default_rng(seed)
        chunks = []
        last = len(self.layer_dims) - 1
        for i, (d_in, d_out) in enumerate(self.layer_dims):
            if i == last and final_zero:
                w = np.zeros((d_out, d_in))
            elif d_out >= d_in:
                q, _ = np.linalg.qr(rng.standard_normal((d_out, d_in)))
                w = gain * q
            else:
                q, _ = np.linalg.qr(rng.standard_normal((d_in, d_out)))
                w = gain * q.T
            chunks.append(w.ravel())
            chunks.append(np.zeros(d_out))
        return np.concatenate(chunks)

    def unflatten(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        if flat.shape != (self.n_params,):
            raise ValueError(f"param vector has length {flat.shape}, expected {self.n_params}")
        layers, off = [], 0
        for d_in, d_out in self.layer_dims:
            w = flat[off:off + d_out * d_in].reshape(d_out, d_in)
            off += d_out * d_in
            b = flat[off:off + d_out]
            off += d_out
            layers.append((w, b))
        return layers

    def flatten(self, layers) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])

    def forward(self, params: np.ndarray, x: np.ndarray):
        """Returns (output (n, d_out), cache for backward)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.config.input_dim:
            raise ValueError(f"input dim {x.shape[1]} != {self.config.input_dim}")
        layers = self.unflatten(params)
        acts = [x]
        h = x
        for i, (w, b) in enumerate(layers):
            z = h @ w.T + b
            h = np.tanh(z) if i < len(layers) - 1 else z
            acts.append(h)
        return h, (layers, acts)

    def backward(self, cache, upstream: np.ndarray):
        """Reverse pass. upstream: (n, d_out) weights on each output.

        Returns (d_input (n, d_in), d_params flat) with the parameter gradient
        summed over the batch (fixed batch-major reduction order).
        """
        layers, acts = cache
        upstream = np.asarray(upstream, dtype=np.float64)
        if not np.all(np.isfinite(upstream)):
            raise ValueError("non-finite upstream gradient")
        grads = [None] * len(layers)
        delta = upstream
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            h_in = acts[i]
            if i < len(layers) - 1:
                # activation output at this layer is acts[i+1] = tanh(z)
                delta = delta * (1.0 - acts[i + 1] ** 2)
            dw = delta.T @ h_in
            db = delta.sum(axis=0)
            grads[i] = (dw, db)
            delta = delta @ w
        return delta, self.flatten(grads)

    def input_jacobian(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Per-sample Jacobian d(output)/d(input), shape (n, d_out, d_in)."""
        out, (layers, acts) = self.forward(params, x)
        n = out.shape[0]
        jac = np.tile(np.eye(self.config.output_dim), (n, 1, 1))
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            if i < len(layers) - 1:
                d_act = 1.0 - acts[i + 1] ** 2            # (n, d_i)
                jac = jac * d_act[:, None, :]
            jac = jac @ w
        return jac


class Policy:
    """Deterministic policy a = squash(mlp(s)); squash is a scaled tanh onto
    the action interval so outputs always respect the bounds."""

    def __init__(self, state_dim: int, action_dim: int, hidden=(64, 64),
                 action_low: float = -1.0, action_high: float = 1.0):
        self.config = NetConfig(state_dim, action_dim, tuple(hidden),
                                output_squash=(action_low, action_high))
        self.net = MLP(self.config)
        self.n_params = self.net.n_params
        self.shape_descriptor = self.net.shape_descriptor

    def init_params(self, seed: int, final_zero: bool = True) -> np.ndarray:
        return self.net.init_params(seed, final_zero=final_zero)

    def _squash(self, z):
        low, high = self.config.output_squash
        return low + (high - low) * 0.5 * (np.tanh(z) + 1.0)

    def forward(self, params: np.ndarray, states: np.ndarray) -> np.ndarray:
        z, _ = self.net.forward(params, states)
        return self._squash(z)

    def backward(self, params: np.ndarray, states: np.ndarray, upstream: np.ndarray):
        """Gradients of upstream^T * action; returns (d_states, d_params)."""
        z, cache = self.net.forward(params, states)
        low, high = self.config.output_squash
        dz = upstream * (high - low) * 0.5 * (1.0 - np.tanh(z) ** 2)
        return self.net.backward(cache, dz)

    def state_jacobian(self, params: np.ndarray, states: np.ndarray) -> np.ndarray:
        """d(action)/d(state), per sample: (n, d_a, d_s)."""
        z, _ = self.net.forward(params, states)
        low, high = self.config.output_squash
        d_squash = (high - low) * 0.5 * (1.0 - np.tanh(z) ** 2)   # (n, d_a)
        return self.net.input_jacobian(params, states) * d_squash[:, :, None]


class FiniteHorizonCritic:
    """Value net over (state, t/T) for a horizon-T sum of a running signal.

    The raw net output is scaled by (1 - t/T), pinning V(s, T) = 0: at the end
    of the horizon there is nothing left to accumulate.  A constant per-step
    signal r is then representable exactly by a constant net output T*r.
    """

    def __init__(self, state_dim: int, horizon: int, hidden=(64, 64)):
        self.horizon = horizon
        self.config = NetConfig(state_dim + 1, 1, tuple(hidden))
        self.net = MLP(self.config)
        self.n_params = self.net.n_params

    def init_params(self, seed: int) -> np.ndarray:
        return self.net.init_params(seed)

    def _features(self, states, ts):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        ts = np.asarray(ts, dtype=np.float64).reshape(-1)
        if np.any(ts < 0) or np.any(ts > self.horizon):
            raise ValueError(f"t out of range [0, {self.horizon}]")
        frac = ts / self.horizon
        return np.concatenate([states, frac[:, None]], axis=1), (1.0 - frac)

    def forward(self, params: np.ndarray, states: np.ndarray, ts) -> np.ndarray:
        feats, weight = self._features(states, ts)
        out, _ = self.net.forward(params, feats)
        return out[:, 0] * weight

    def backward(self, params: np.ndarray, states: np.ndarray, ts, upstream):
        """upstream: (n,) on the value; returns (d_states, d_params)."""
        feats, weight = self._features(states, ts)
        out, cache = self.net.forward(params, feats)
        d_feats, d_params = self.net.backward(
            cache, (np.asarray(upstream, dtype=np.float64) * weight)[:, None])
        return d_feats[:, :-1], d_params


class WorldModel:
    """One-step model (s, a) -> (s', r, c) used to supply gradients where the
    real environment has none.  The state head is residual: the net predicts
    the state change, which keeps near-integrator dynamics in the easy regime
    and makes the zero-initialized model the identity map on states."""

    def __init__(self, state_dim: int, action_dim: int, hidden=(64, 64)):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.config = NetConfig(state_dim + action_dim, state_dim + 2, tuple(hidden))
        self.net = MLP(self.config)
        self.n_params = self.net.n_params

    def init_params(self, seed: int) -> np.ndarray:
        return self.net.init_params(seed)

    def _features(self, states, actions):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if states.shape[1] != self.state_dim or actions.shape[1] != self.action_dim:
            raise ValueError("world model input dims mismatch")
        return states, np.concatenate([states, actions], axis=1)

    def forward(self, params: np.ndarray, states, actions):
        states, feats = self._features(states, actions)
        out, _ = self.net.forward(params, feats)
        ds = self.state_dim
        return states + out[:, :ds], out[:, ds], out[:, ds + 1]

    def head_targets(self, s, s_next, r, c) -> np.ndarray:
        """Raw-net regression targets for a transition batch."""
        return np.concatenate([
            np.asarray(s_next, dtype=np.float64) - np.asarray(s, dtype=np.float64),
            np.asarray(r, dtype=np.float64).reshape(-1, 1),
            np.asarray(c, dtype=np.float64).reshape(-1, 1),
        ], axis=1)

    def backward(self, params: np.ndarray, states, actions, upstream):
        """upstream: (n, state_dim + 2) on the stacked (s', r, c) output.
        Returns (d_states, d_actions, d_params)."""
        states, feats = self._features(states, actions)
        _, cache = self.net.forward(params, feats)
        d_in, d_params = self.net.backward(cache, np.asarray(upstream, dtype=np.float64))
        ds = self.state_dim
        # residual head: s' = s + net(...)[:ds]
        d_states = d_in[:, :ds] + np.asarray(upstream, dtype=np.float64)[:, :ds]
        return d_states, d_in[:, ds:], d_params

    def input_jacobians(self, params: np.ndarray, states, actions):
        """Per-sample blocks (df_ds, df_da, dr_ds, dr_da, dc_ds, dc_da)."""
        states, feats = self._features(states, actions)
        jac = self.net.input_jacobian(params, feats)
        ds, da = self.state_dim, self.action_dim
        df_ds = jac[:, :ds, :ds] + np.eye(ds)[None, :, :]
        return (df_ds, jac[:, :ds, ds:ds + da],
                jac[:, ds, :ds], jac[:, ds, ds:ds + da],
                jac[:, ds + 1, :ds], jac[:, ds + 1, ds:ds + da])
