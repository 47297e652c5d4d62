"""Client-side kernel execution.

Each kernel maps a :class:`ClientDataset` to a small JSON-ready payload.
Payloads carry statistics only; no row of the dataset ever leaves here.
"""
from __future__ import annotations

import numpy as np

from fedlens.core import CATEGORICAL, ClientDataset, Kernel, digest_value
from fedlens.errors import DegenerateDistribution, InsufficientSamples, InvalidRange, NonCategoricalAttribute
from fedlens.stats import ADJUSTED, FeatureStats, histogram, sketch_of, skewness


def kernel_features(kernel: Kernel, ds: ClientDataset) -> list[str]:
    names = kernel.get("features")
    if names in (None, "all"):
        return list(ds.schema.numeric_features)
    if names == "predictors":
        return list(ds.schema.predictors)
    if isinstance(names, str):
        return [names]
    return list(names)


def _columns(kernel: Kernel, ds: ClientDataset) -> tuple[list[str], np.ndarray]:
    names = kernel_features(kernel, ds)
    return names, ds.rows[:, ds.schema.columns(names)]


def _count(kernel, ds, salt):
    return {"value": ds.n_samples}


def _feature_count(kernel, ds, salt):
    return {"value": ds.n_features}


def _sum(kernel, ds, salt):
    names, x = _columns(kernel, ds)
    power = int(kernel.get("power", 1))
    center = kernel.get("center")
    if center is not None:
        x = x - np.asarray(center, dtype=np.float64)
    return {"features": names, "n": ds.n_samples, "value": (x**power).sum(axis=0).tolist()}


def _mean(kernel, ds, salt):
    names, x = _columns(kernel, ds)
    power = int(kernel.get("power", 1))
    if ds.n_samples == 0:
        value = [0.0] * len(names)
    else:
        value = (x**power).mean(axis=0).tolist()
    return {"features": names, "n": ds.n_samples, "value": value}


def _sketches(kernel, ds, salt):
    names, x = _columns(kernel, ds)
    return {"features": names, "n": ds.n_samples, "sketches": [sketch_of(x[:, i]).to_dict() for i in range(len(names))]}


def _variance(kernel, ds, salt):
    out = _sketches(kernel, ds, salt)
    ddof = int(kernel.get("ddof", 0))
    n = ds.n_samples
    out["value"] = [s["m2"] / (n - ddof) if n > ddof else None for s in out["sketches"]]
    return out


def _extreme(fn):
    def run(kernel, ds, salt):
        names, x = _columns(kernel, ds)
        value = [float(v) for v in fn(x, axis=0)] if ds.n_samples else [None] * len(names)
        return {"features": names, "value": value}

    return run


def _skewness(kernel, ds, salt):
    names, x = _columns(kernel, ds)
    convention = kernel.get("convention", ADJUSTED)
    value = []
    for i in range(len(names)):
        try:
            value.append(skewness(sketch_of(x[:, i]), convention))
        except (InsufficientSamples, DegenerateDistribution):
            value.append(None)
    return {"features": names, "convention": convention, "value": value}


def _histogram(kernel, ds, salt):
    name = kernel.get("feature")
    bounds = kernel.get("range")
    if bounds is None or len(bounds) != 2:
        raise InvalidRange("histogram needs range=[lo, hi]")
    h = histogram(ds.column(name), int(kernel.get("bins", 10)), (float(bounds[0]), float(bounds[1])))
    return {
        "feature": name,
        "n": ds.n_samples,
        "value": h.counts.tolist(),
        "underflow": h.underflow,
        "overflow": h.overflow,
    }


def _set_cardinality(kernel, ds, salt):
    attr = kernel.get("attr")
    if ds.schema.kind_of(attr) != CATEGORICAL:
        raise NonCategoricalAttribute(f"{attr!r} is not a categorical attribute")
    values = ds.categorical_values.get(attr, frozenset())
    return {"attr": attr, "digests": sorted(digest_value(v, salt) for v in values)}


def _gram(kernel, ds, salt):
    # PCA defaults to the predictors, not every numeric column
    if kernel.get("features") is None:
        names = list(ds.schema.predictors)
    else:
        names = kernel_features(kernel, ds)
    x = ds.rows[:, ds.schema.columns(names)]
    g = x.T @ x
    g = 0.5 * (g + g.T)
    return {"features": names, "n": ds.n_samples, "s": x.sum(axis=0).tolist(), "g": g.tolist()}


KERNELS = {
    "count": _count,
    "feature_count": _feature_count,
    "sum": _sum,
    "mean": _mean,
    "variance": _variance,
    "moments": _sketches,
    "min": _extreme(np.min),
    "max": _extreme(np.max),
    "skewness": _skewness,
    "histogram": _histogram,
    "set_cardinality": _set_cardinality,
    "gram_for_pca": _gram,
}


def run_kernel(kernel: Kernel, ds: ClientDataset, salt: str = "") -> dict:
    return KERNELS[kernel.name](kernel, ds, salt)


def feature_stats(ds: ClientDataset) -> list[FeatureStats]:
    """Per-feature stats bundle (sketch + extrema) for every numeric column."""
    return [FeatureStats.of(name, ds.column(name)) for name in ds.schema.numeric_features]
