"""Binary temporal pyramid: frame-to-node membership, node means and aggregation.

Nodes are indexed by ``(k, l)`` with level ``l`` in ``1..D`` and position
``k`` in ``1..2**(l-1)``. Everywhere a flat layout is needed the nodes are
stored breadth-first: ``(1,1), (1,2), (2,2), (1,3), ...``.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_frames, check_positive_int, check_sequences, check_weights


def node_count(depth):
    """Number of nodes in a full binary pyramid of ``depth`` levels."""
    return 2 ** depth - 1


def node_index(k, l):
    """Breadth-first flat index of node ``(k, l)`` (both 1-based)."""
    if l < 1 or k < 1 or k > 2 ** (l - 1):
        raise ValueError(f"no node ({k}, {l})")
    return 2 ** (l - 1) - 1 + (k - 1)


def node_labels(depth):
    """``(k, l)`` pairs in flat order."""
    return [(k, l) for l in range(1, depth + 1) for k in range(1, 2 ** (l - 1) + 1)]


def leaf_slice(depth):
    return slice(2 ** (depth - 1) - 1, 2 ** depth - 1)


@dataclass(frozen=True)
class MembershipTable:
    """Assignment of frames to pyramid nodes.

    Attributes
    ----------
    T : int
        Length of the sequence the partition was built for.
    depth : int
    frames : ndarray of shape (n,)
        Frame indices covered by the table. ``arange(T)`` for a full table,
        a subset when restricted to scheduled frames.
    nodes : ndarray of shape (n, depth)
        ``nodes[i, l-1]`` is the flat index of the level-``l`` node holding
        ``frames[i]``.
    """

    T: int
    depth: int
    frames: np.ndarray
    nodes: np.ndarray

    @property
    def n_nodes(self):
        return node_count(self.depth)

    @property
    def sizes(self):
        """Number of covered frames in every node, flat order."""
        return np.bincount(self.nodes.ravel(), minlength=self.n_nodes)

    def members(self, k, l):
        """Frame indices belonging to node ``(k, l)``, ascending."""
        return self.frames[self.nodes[:, l - 1] == node_index(k, l)]

    def indicator(self):
        """Dense 0/1 matrix ``mu`` of shape (n_frames, n_nodes)."""
        mu = np.zeros((len(self.frames), self.n_nodes))
        rows = np.repeat(np.arange(len(self.frames)), self.depth)
        mu[rows, self.nodes.ravel()] = 1.0
        return mu

    def averaging_matrix(self):
        """(n_nodes, n_frames) matrix mapping frame rows to node means.

        Rows of empty nodes are zero.
        """
        mu = self.indicator().T
        sizes = mu.sum(axis=1, keepdims=True)
        return np.divide(mu, sizes, out=np.zeros_like(mu), where=sizes > 0)

    def restrict(self, frames):
        """Table over the given subset of frame indices, original positions kept."""
        frames = np.asarray(frames, dtype=np.intp)
        pos = np.searchsorted(self.frames, frames)
        if np.any(pos >= len(self.frames)) or np.any(self.frames[np.minimum(pos, len(self.frames) - 1)] != frames):
            raise ValueError("restriction contains frames outside the table")
        return MembershipTable(self.T, self.depth, frames, self.nodes[pos])


def build_partition(T, depth):
    """Split ``T`` frames into the nodes of a ``depth``-level pyramid.

    Frame ``t`` goes to node ``(k, l)`` iff ``floor(t * 2**(l-1) / T) == k - 1``.
    Levels with more nodes than frames leave some nodes empty.
    """
    T = check_positive_int(T, "T")
    depth = check_positive_int(depth, "depth")
    t = np.arange(T)
    nodes = np.empty((T, depth), dtype=np.intp)
    for l in range(1, depth + 1):
        width = 2 ** (l - 1)
        nodes[:, l - 1] = width - 1 + (t * width) // T
    return MembershipTable(T, depth, t, nodes)


def node_descriptors(frames, membership):
    """Mean feature vector of every node, shape (n_nodes, d); empty nodes are zero."""
    frames = check_frames(frames)
    if frames.shape[0] != len(membership.frames):
        raise ValueError(
            f"got {frames.shape[0]} frame rows for a table covering "
            f"{len(membership.frames)} frames")
    return membership.averaging_matrix() @ frames


def aggregate_concat(descriptors, weights):
    """Weighted block stacking: block ``j`` of the output is ``weights[j] * descriptors[j]``."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    w = check_weights(weights, descriptors.shape[0])
    return (w[:, None] * descriptors).ravel()


def aggregate_average(descriptors, weights):
    """Weighted sum of node descriptors, length d."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    w = check_weights(weights, descriptors.shape[0])
    return w @ descriptors


AGGREGATORS = {"concat": aggregate_concat, "average": aggregate_average}


def check_variant(variant):
    if variant not in AGGREGATORS:
        raise ValueError(f"variant must be one of {sorted(AGGREGATORS)}, got {variant!r}")
    return variant


class PyramidPooling(TransformerMixin, BaseEstimator):
    """Pool variable-length frame sequences into fixed-size pyramid vectors.

    Parameters
    ----------
    depth : int, default=3
        Number of pyramid levels.
    variant : {"concat", "average"}, default="concat"
        Block stacking of weighted node means, or their weighted sum.
    weights : array-like of shape (2**depth - 1,), default=None
        Node weights on the simplex, breadth-first. Uniform when omitted.
    """

    def __init__(self, depth=3, variant="concat", weights=None):
        self.depth = depth
        self.variant = variant
        self.weights = weights

    def fit(self, X, y=None):
        seqs = check_sequences(X)
        check_positive_int(self.depth, "depth")
        check_variant(self.variant)
        n = node_count(self.depth)
        if self.weights is None:
            self.weights_ = np.full(n, 1.0 / n)
        else:
            self.weights_ = check_weights(self.weights, n)
            if np.any(self.weights_ < 0) or abs(self.weights_.sum() - 1.0) > 1e-9:
                raise ValueError("weights must lie on the probability simplex")
        self.n_features_in_ = seqs[0].shape[1]
        return self

    def descriptors(self, X):
        """Node means for every sequence, shape (n_sequences, n_nodes, d)."""
        seqs = check_sequences(X)
        return np.stack([node_descriptors(s, build_partition(len(s), self.depth)) for s in seqs])

    def transform(self, X):
        if not hasattr(self, "weights_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("PyramidPooling is not fitted yet")
        desc = self.descriptors(X)
        if desc.shape[2] != self.n_features_in_:
            raise ValueError(
                f"X has {desc.shape[2]} features, PyramidPooling was fitted with {self.n_features_in_}")
        agg = AGGREGATORS[self.variant]
        return np.stack([agg(d, self.weights_) for d in desc])
