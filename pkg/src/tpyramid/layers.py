"""Dense building blocks with hand-written backward passes.

Forward functions never mutate their inputs; anything the backward pass
needs is returned as a cache.
"""

import numpy as np

ACTIVATIONS = ("tanh", "relu", "linear")


def activate(x, kind):
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "linear":
        return x
    raise ValueError(f"activation must be one of {ACTIVATIONS}, got {kind!r}")


def activation_grad(y, kind):
    """Derivative of the activation expressed through its output ``y``."""
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "relu":
        return (y > 0).astype(y.dtype)
    return np.ones_like(y)


class FramewiseEncoder:
    """Per-frame MLP ``phi(x) = act(W_n ... act(W_1 x + b_1) ... + b_n)``.

    Weight matrices have shape (out, in). Arrays are held by reference, so an
    encoder built over a parameter dict sees in-place updates.
    """

    def __init__(self, weights, biases=None, activation="tanh"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        self.weights = list(weights)
        self.biases = list(biases) if biases is not None else [None] * len(self.weights)
        self.activation = activation

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    def forward(self, X):
        cache = []
        h = X
        for W, b in zip(self.weights, self.biases):
            z = h @ W.T
            if b is not None:
                z = z + b
            out = activate(z, self.activation)
            cache.append((h, out))
            h = out
        return h, cache

    def backward(self, cache, grad_out):
        """Gradients ``[(dW, db), ...]`` in layer order; ``db`` is None for bias-free layers."""
        grads = [None] * len(self.weights)
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            h, out = cache[i]
            dz = g * activation_grad(out, self.activation)
            grads[i] = (dz.T @ h, dz.sum(axis=0) if self.biases[i] is not None else None)
            g = dz @ self.weights[i]
        return grads


def batchnorm_forward(x, gamma, beta, training, running_mean=None, running_var=None, eps=1e-5):
    """Normalize columns of ``x`` (batch, features).

    Returns ``(y, cache, (batch_mean, batch_var))``; batch statistics are None
    in evaluation mode.
    """
    if training:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    y = gamma * xhat + beta
    cache = (xhat, inv, gamma, training)
    stats = (mean, var) if training else None
    return y, cache, stats


def batchnorm_backward(cache, dy):
    xhat, inv, gamma, training = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if not training:
        return dxhat * inv, dgamma, dbeta
    n = dy.shape[0]
    dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def update_running_stats(running_mean, running_var, stats, n, momentum):
    """Exponential moving average; ``momentum`` is the weight kept on the old value."""
    mean, var = stats
    if n > 1:
        var = var * n / (n - 1)
    running_mean *= momentum
    running_mean += (1.0 - momentum) * mean
    running_var *= momentum
    running_var += (1.0 - momentum) * var


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p, dp):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))
