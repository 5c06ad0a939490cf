"""Small numpy building blocks shared by the autoencoder, refiners and classifier."""

from __future__ import annotations

import numpy as np


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dense(x, W, b):
    # one 2-d product instead of a stack of small ones
    out = x.reshape(-1, x.shape[-1]) @ W + b
    return out.reshape(x.shape[:-1] + (W.shape[1],))


def dense_backward(x, W, dout):
    """Gradients of ``x @ W + b`` for arbitrary leading batch axes."""
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return d2 @ W.T if W is not None else None, x2.T @ d2, d2.sum(axis=0)


def mlp2_forward(x, W1, b1, W2, b2):
    """Hidden rectifier layer followed by a linear layer."""
    pre = dense(x, W1, b1)
    h = relu(pre)
    return dense(h, W2, b2), (x, pre, h)


def mlp2_backward(dout, cache, W1, W2):
    x, pre, h = cache
    dh, dW2, db2 = dense_backward(h, W2, dout)
    dpre = dh.reshape(pre.shape) * (pre > 0)
    dx, dW1, db1 = dense_backward(x, W1, dpre)
    return dx.reshape(x.shape), dW1, db1, dW2, db2
