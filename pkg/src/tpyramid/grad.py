"""Gradient assembly through the pyramid membership, frame scheduling and FD checks."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive_int


def select_frames(T, K, r):
    """Frames ``t`` in ``[0, T)`` with ``t % K == r % K``."""
    T = check_positive_int(T, "T")
    K = check_positive_int(K, "K")
    return np.arange(r % K, T, K)


@dataclass(frozen=True)
class SurrogateSchedule:
    """Periodic frame selection: epoch ``r`` uses the residue class ``r mod K``."""

    K: int = 1
    r: int = 0

    def __post_init__(self):
        check_positive_int(self.K, "K")

    def frames(self, T):
        return select_frames(T, self.K, self.r)

    def advance(self):
        return SurrogateSchedule(self.K, self.r + 1)


@dataclass
class GradTape:
    """Per-video gradient buffers.

    ``node_grads`` holds dE/dpsi for every node (n_nodes, d); ``frame_grads``
    is filled by :func:`pool_backward`; ``accum`` sums parameter gradients by
    block name.
    """

    node_grads: np.ndarray
    frame_grads: np.ndarray = None
    accum: dict = field(default_factory=dict)
    skipped: int = 0

    def add(self, name, value):
        if name in self.accum:
            self.accum[name] = self.accum[name] + value
        else:
            self.accum[name] = np.array(value, dtype=np.float64)

    def zero(self):
        self.accum.clear()
        self.frame_grads = None
        self.skipped = 0


def pool_backward(grad_node, membership, node, out=None):
    """Spread ``grad_node`` evenly over the member frames of flat node ``node``.

    Returns the (n_frames, d) per-frame gradient buffer, adding into ``out``
    when given. Rows follow ``membership.frames``. Empty nodes add nothing.
    """
    grad_node = np.asarray(grad_node, dtype=np.float64)
    if out is None:
        out = np.zeros((len(membership.frames), grad_node.shape[-1]))
    rows = np.flatnonzero((membership.nodes == node).any(axis=1))
    if rows.size:
        out[rows] += grad_node / rows.size
    return out


def pool_backward_all(node_grads, membership):
    """Per-frame gradients from every node at once; same result as looping :func:`pool_backward`."""
    return membership.averaging_matrix().T @ node_grads


def assemble_param_gradient(tape, membership, encoder, frames, schedule=None, cache=None,
                            prefix="enc"):
    """Chain node gradients through the membership and the frame encoder.

    Computes ``sum_{k,l} sum_t mu_t^{k,l} dE/dpsi_{k,l} dpsi_{k,l}/dphi_t dphi_t/dalpha``
    over the frames of ``membership``, or only over ``schedule.frames(T)``
    when a schedule is given (node sizes then count scheduled frames only).
    ``frames`` holds the raw input rows for ``membership.frames``. The encoder
    forward is recomputed unless its ``cache`` is supplied. Gradients are
    added into ``tape.accum`` as ``{prefix}.W{i}`` / ``{prefix}.b{i}``.

    Returns the tape. A schedule that selects no frame leaves the tape
    unchanged apart from ``tape.skipped``.
    """
    if schedule is not None:
        chosen = schedule.frames(membership.T)
        chosen = np.intersect1d(chosen, membership.frames)
        if chosen.size == 0:
            tape.skipped += 1
            return tape
        rows = np.searchsorted(membership.frames, chosen)
        membership = membership.restrict(chosen)
        frames = np.asarray(frames)[rows]
        cache = None
    if cache is None:
        _, cache = encoder.forward(np.asarray(frames, dtype=np.float64))
    tape.frame_grads = pool_backward_all(tape.node_grads, membership)
    for i, (dW, db) in enumerate(encoder.backward(cache, tape.frame_grads)):
        tape.add(f"{prefix}.W{i}", dW)
        if db is not None:
            tape.add(f"{prefix}.b{i}", db)
    return tape


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-12, np.abs(a) + np.abs(n))


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: int
    analytic: np.ndarray
    numeric: np.ndarray
    failed_index: int = None

    @property
    def ok(self):
        return self.failed_index is None


def numeric_gradient(f, theta, eps=1e-6):
    """Central differences of scalar ``f`` at ``theta``.

    Returns ``(grad, failed_index)`` where ``failed_index`` is the first
    coordinate whose evaluations were not finite.
    """
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    g = grad.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + eps
        fp = f(theta)
        flat[j] = old - eps
        fm = f(theta)
        flat[j] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            return grad, j
        g[j] = (fp - fm) / (2 * eps)
    return grad, None


def finite_diff_check(f, grad, theta, eps=1e-6):
    """Compare ``grad(theta)`` with central differences of ``f``.

    The error per coordinate is ``|a - n| / max(1e-12, |a| + |n|)``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    analytic = np.asarray(grad(theta.copy()), dtype=np.float64).reshape(theta.shape)
    numeric, failed = numeric_gradient(f, theta, eps)
    if failed is not None:
        return GradCheckResult(np.inf, failed, analytic, numeric, failed_index=failed)
    err = relative_error(analytic, numeric).ravel()
    worst = int(np.argmax(err)) if err.size else 0
    return GradCheckResult(float(err.max()) if err.size else 0.0, worst, analytic, numeric)
