"""Input checks shared by the estimators and the functional API."""

import numbers

import numpy as np


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_frames(frames, name="frames", d=None):
    """Return ``frames`` as a finite float64 (T, d) array with T >= 1."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D (T, d) array, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one frame")
    if d is not None and arr.shape[1] != d:
        raise ValueError(f"{name} has feature dimension {arr.shape[1]}, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_sequences(X, name="X"):
    """Validate a list of variable-length frame matrices sharing one feature size."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    seqs = [check_frames(x, f"{name}[{i}]") for i, x in enumerate(X)]
    if not seqs:
        raise ValueError(f"{name} is empty")
    d = seqs[0].shape[1]
    for i, s in enumerate(seqs):
        if s.shape[1] != d:
            raise ValueError(
                f"{name}[{i}] has feature dimension {s.shape[1]}, expected {d}")
    return seqs


def check_weights(weights, n, name="weights"):
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape[0] != n:
        raise ValueError(f"{name} has {w.shape[0]} entries, expected {n}")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{name} contains non-finite values")
    return w
