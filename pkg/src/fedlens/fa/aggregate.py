"""Server-side aggregation of client payloads."""
from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from fedlens.core import ADDITION, AVERAGE, CUMULATIVE, Aggregation, Kernel
from fedlens.errors import IncompatibleAggregation, ShapeMismatch, ZeroTotalWeight
from fedlens.stats import MomentSketch, merge_all


def aggregate(method: str, values: Sequence[Any], weights: Sequence[float] | None = None):
    """Combine homogeneous values by ``cumulative``, ``addition`` or ``average``.

    Cumulative keeps the values as an ordered list; addition sums elementwise;
    average takes the (optionally weighted) elementwise mean.
    """
    if not values:
        raise ValueError("nothing to aggregate")
    if method == CUMULATIVE:
        return list(values)
    arrays = [np.asarray(v, dtype=np.float64) for v in values]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeMismatch(f"payload shapes differ: {shape} vs {a.shape}")
    stacked = np.stack(arrays)
    if method == ADDITION:
        out = stacked.sum(axis=0)
    elif method == AVERAGE:
        if weights is None:
            out = stacked.mean(axis=0)
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (len(arrays),):
                raise ShapeMismatch("one weight per value is required")
            total = w.sum()
            if total == 0:
                raise ZeroTotalWeight("weights sum to zero")
            out = np.tensordot(w, stacked, axes=1) / total
    else:
        raise IncompatibleAggregation(f"unknown aggregation {method!r}")
    return float(out) if out.ndim == 0 else out.tolist()


def _check_same(payloads, key):
    first = payloads[0].get(key)
    for p in payloads[1:]:
        if p.get(key) != first:
            raise ShapeMismatch(f"clients disagree on {key!r}")
    return first


def combine(kernel: Kernel, agg: Aggregation, payloads: list[dict]):
    """Aggregate one kernel's payloads (already in cohort order)."""
    if agg.method == CUMULATIVE:
        if "value" not in payloads[0]:
            return list(payloads)
        return aggregate(CUMULATIVE, [p["value"] for p in payloads])

    name = kernel.name
    if name in ("variance", "moments"):
        return _combine_sketches(kernel, agg, payloads)
    if name == "gram_for_pca":
        _check_same(payloads, "features")
        return {
            "features": payloads[0]["features"],
            "n": int(sum(p["n"] for p in payloads)),
            "s": aggregate(ADDITION, [p["s"] for p in payloads]),
            "g": aggregate(ADDITION, [p["g"] for p in payloads]),
        }

    if "features" in payloads[0]:
        _check_same(payloads, "features")
    values = [p["value"] for p in payloads]
    weights = None
    if agg.method == AVERAGE and agg.weighted:
        weights = [p.get("n", p["value"] if name == "count" else 1) for p in payloads]
    out = aggregate(agg.method, values, weights)
    if name in ("count", "feature_count") and agg.method == ADDITION:
        out = int(round(out))
    if name == "histogram" and agg.method == ADDITION:
        return {
            "value": [int(round(v)) for v in out],
            "underflow": int(sum(p["underflow"] for p in payloads)),
            "overflow": int(sum(p["overflow"] for p in payloads)),
        }
    return out


def _combine_sketches(kernel: Kernel, agg: Aggregation, payloads):
    _check_same(payloads, "features")
    names = payloads[0]["features"]
    if agg.method == AVERAGE:
        weights = [p["n"] for p in payloads] if agg.weighted else None
        values = [[0.0 if v is None else v for v in p["value"]] for p in payloads]
        if weights is not None and sum(weights) == 0:
            raise ZeroTotalWeight("all clients are empty")
        return aggregate(AVERAGE, values, weights)
    merged = [
        merge_all(MomentSketch.from_dict(p["sketches"][i]) for p in payloads) for i in range(len(names))
    ]
    if kernel.name == "moments":
        return {"features": names, "sketches": [s.to_dict() for s in merged]}
    ddof = int(kernel.get("ddof", 0))
    return [s.m2 / (s.n - ddof) if s.n > ddof else None for s in merged]
