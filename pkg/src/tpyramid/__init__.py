"""Learnable multi-granularity temporal pyramids for sequence classification."""

from .pyramid import (
    MembershipTable,
    PyramidPooling,
    aggregate_average,
    aggregate_concat,
    build_partition,
    node_count,
    node_descriptors,
    node_index,
    node_labels,
)
from .simplex import SimplexWeights, backprop_through_simplex, jacobian, normalize

__version__ = "0.1.0"
