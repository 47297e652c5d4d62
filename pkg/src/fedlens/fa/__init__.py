"""Federated analytics query engine."""
from fedlens.fa.aggregate import aggregate, combine
from fedlens.fa.engine import EXACT, INTERSECTION, UNION, FAServer
from fedlens.fa.pca import PCAResult, pca_from_gram
from fedlens.fa.secure import mask_vector, unmask_sum

__all__ = [
    "EXACT",
    "FAServer",
    "INTERSECTION",
    "PCAResult",
    "UNION",
    "aggregate",
    "combine",
    "mask_vector",
    "pca_from_gram",
    "unmask_sum",
]
