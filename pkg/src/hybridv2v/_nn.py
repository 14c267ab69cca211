"""Small dense network with ramp hidden nodes, trained by plain backprop.

Weights and biases travel as plain lists of arrays so callers can wrap them
in whatever model record they need and serialize them as nested lists.
"""

import math

import numpy as np


class Diverged(RuntimeError):
    """Training loss stopped being finite."""


def init_layers(dims, rng):
    """Fan-in scaled Gaussian weights, zero biases, one pair per layer."""
    weights = []
    biases = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((d_in, d_out)) * math.sqrt(2.0 / d_in))
        biases.append(np.zeros(d_out))
    return weights, biases


def forward(weights, biases, x):
    """All layer activations for a batch; ramp everywhere but the head."""
    acts = [np.asarray(x, dtype=float)]
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = acts[-1] @ w + b
        acts.append(z if k == last else np.maximum(z, 0.0))
    return acts


def _mse_step(weights, biases, x, y, lr):
    acts = forward(weights, biases, x)
    pred = acts[-1]
    delta = 2.0 * (pred - y) / x.shape[0]
    for k in range(len(weights) - 1, -1, -1):
        grad_w = acts[k].T @ delta
        grad_b = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ weights[k].T) * (acts[k] > 0.0)
        weights[k] -= lr * grad_w
        biases[k] -= lr * grad_b


def mse_loss(weights, biases, x, y) -> float:
    pred = forward(weights, biases, x)[-1]
    return float(np.mean((pred - y) ** 2))


def train_mse(weights, biases, x, y, rng, epochs: int = 2000,
              batch_size: int = 64, lr: float = 1e-2, patience: int = 3,
              min_lr: float = 1e-6):
    """Mini-batch descent on squared error, halving the rate on plateau.

    Epochs that do not improve the full-batch loss are rolled back, so the
    returned per-epoch history of the running best is non-increasing. The
    arrays are updated in place and end at the best state seen.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    best_w = [w.copy() for w in weights]
    best_b = [b.copy() for b in biases]
    best_loss = mse_loss(weights, biases, x, y)
    if not math.isfinite(best_loss):
        raise Diverged("loss is not finite before training")
    history = [best_loss]
    stall = 0
    for _ in range(epochs):
        if lr < min_lr:
            break
        order = rng.permutation(n)
        # overflow here is a divergence, reported through the exception
        with np.errstate(over="ignore", invalid="ignore"):
            for lo in range(0, n, batch_size):
                pick = order[lo:lo + batch_size]
                _mse_step(weights, biases, x[pick], y[pick], lr)
            loss = mse_loss(weights, biases, x, y)
        if not math.isfinite(loss):
            raise Diverged(f"loss became non-finite at lr {lr:g}")
        if loss < best_loss:
            best_loss = loss
            best_w = [w.copy() for w in weights]
            best_b = [b.copy() for b in biases]
            stall = 0
        else:
            for w, bw in zip(weights, best_w):
                w[...] = bw
            for b, bb in zip(biases, best_b):
                b[...] = bb
            stall += 1
            if stall >= patience:
                lr *= 0.5
                stall = 0
        history.append(best_loss)
    for w, bw in zip(weights, best_w):
        w[...] = bw
    for b, bb in zip(biases, best_b):
        b[...] = bb
    return history
