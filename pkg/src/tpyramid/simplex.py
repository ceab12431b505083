"""Simplex-constrained weights through the exp (softmax) reparametrization."""

from dataclasses import dataclass, field

import numpy as np


def normalize(free):
    """Map unconstrained parameters onto the probability simplex."""
    free = np.asarray(free, dtype=np.float64)
    if free.ndim != 1 or free.size == 0:
        raise ValueError("free parameters must be a non-empty vector")
    if not np.all(np.isfinite(free)):
        raise ValueError("free parameters contain non-finite values")
    e = np.exp(free - free.max())
    return e / e.sum()


def jacobian(weights):
    """``J[p, j] = d weights[p] / d free[j] = weights[j] * (delta_pj - weights[p])``."""
    w = np.asarray(weights, dtype=np.float64)
    return np.diag(w) - np.outer(w, w)


def backprop_through_simplex(grad_weights, weights):
    """Pull a gradient w.r.t. the normalized weights back to the free parameters.

    Computes ``J.T @ grad_weights`` without forming ``J``.
    """
    g = np.asarray(grad_weights, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if g.shape != w.shape:
        raise ValueError(f"gradient has shape {g.shape}, weights have shape {w.shape}")
    return w * (g - g @ w)


@dataclass
class SimplexWeights:
    """A bundle of free parameters and their normalized view."""

    free: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @classmethod
    def uniform(cls, n):
        return cls(np.zeros(n))

    @property
    def weights(self):
        return normalize(self.free)

    def __len__(self):
        return len(self.free)

    def backward(self, grad_weights):
        return backprop_through_simplex(grad_weights, self.weights)
