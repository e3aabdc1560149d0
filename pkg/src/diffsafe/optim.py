"""Adam on flat parameter vectors, plus a small MSE regression driver."""

from __future__ import annotations

import numpy as np


class TrainingDiverged(RuntimeError):
    """Raised when a regression loss blows past its divergence guard."""


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def guarded_epochs(params: np.ndarray, full_loss, run_epoch, epochs: int,
                   divergence_factor: float = 1e3):
    """Adam epochs with a best-iterate guard.

    The full loss is measured after every epoch and the best parameters seen
    are restored at the end, so the fit's final loss never exceeds its
    initial one (a fresh Adam run from a converged point always jiggles, and
    transient bumps on the way down are allowed without being kept).  A loss
    beyond divergence_factor x initial aborts.  Returns (params, losses) with
    losses[-1] being the restored best.
    """
    losses = [full_loss(params)]
    best_params, best_loss = params, losses[0]
    for epoch in range(epochs):
        params = run_epoch(params, epoch)
        losses.append(full_loss(params))
        if losses[-1] > divergence_factor * max(losses[0], 1e-300):
            raise TrainingDiverged(
                f"loss {losses[-1]:.3e} exceeded {divergence_factor:.0e} x "
                f"initial {losses[0]:.3e}")
        if losses[-1] < best_loss:
            best_params, best_loss = params, losses[-1]
    if epochs > 0:
        params = best_params
        losses.append(best_loss)
    return params, losses


def fit_mse(net, params: np.ndarray, inputs: np.ndarray, targets: np.ndarray,
            epochs: int, lr: float, minibatch: int, seed: int,
            divergence_factor: float = 1e3):
    """Minibatch-Adam regression of net(inputs) onto targets (n, d_out),
    epoch-guarded per guarded_epochs.  Returns (params, losses)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    n = inputs.shape[0]
    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr)

    def full_loss(p):
        out, _ = net.forward(p, inputs)
        return float(np.mean((out - targets) ** 2))

    def run_epoch(p, _epoch):
        order = rng.permutation(n)
        for start in range(0, n, minibatch):
            idx = order[start:start + minibatch]
            out, cache = net.forward(p, inputs[idx])
            resid = out - targets[idx]
            _, grad = net.backward(cache, 2.0 * resid / resid.size)
            p = opt.step(p, grad)
        return p

    return guarded_epochs(params, full_loss, run_epoch, epochs,
                          divergence_factor)
