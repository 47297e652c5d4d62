"""Mergeable local statistics: central-moment sketches, skewness, extrema, histograms.

A :class:`MomentSketch` keeps ``(n, mean, m2, m3)`` where ``m2``/``m3`` are
sums of squared/cubed deviations from the mean. Sketches combine with the
pairwise update of Chan et al. / Pébay, so a server can recover pooled
moments without seeing any sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from fedlens.errors import (
    DegenerateDistribution,
    InsufficientSamples,
    InvalidRange,
    NonFiniteInput,
)

MOMENT_G1 = "moment_g1"
ADJUSTED = "adjusted"


@dataclass(frozen=True)
class MomentSketch:
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if self.n == 0 and (self.mean or self.m2 or self.m3):
            raise ValueError("empty sketch must have zero moments")

    @classmethod
    def singleton(cls, x: float) -> MomentSketch:
        return accumulate(EMPTY, x)

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "m2": self.m2, "m3": self.m3}

    @classmethod
    def from_dict(cls, d) -> MomentSketch:
        return cls(int(d["n"]), float(d["mean"]), float(d["m2"]), float(d["m3"]))


EMPTY = MomentSketch()


def accumulate(sketch: MomentSketch, x: float) -> MomentSketch:
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteInput(f"cannot accumulate {x!r}")
    n0 = sketch.n
    n = n0 + 1
    delta = x - sketch.mean
    delta_n = delta / n
    term1 = delta * delta_n * n0
    m3 = sketch.m3 + term1 * delta_n * (n - 2) - 3.0 * delta_n * sketch.m2
    m2 = sketch.m2 + term1
    return MomentSketch(n, sketch.mean + delta_n, m2, m3)


def merge(a: MomentSketch, b: MomentSketch) -> MomentSketch:
    if a.n == 0:
        return b
    if b.n == 0:
        return a
    na, nb = a.n, b.n
    n = na + nb
    delta = b.mean - a.mean
    mean = (na * a.mean + nb * b.mean) / n
    m2 = a.m2 + b.m2 + delta * delta * na * nb / n
    m3 = (
        a.m3
        + b.m3
        + delta**3 * na * nb * (na - nb) / (n * n)
        + 3.0 * delta * (na * b.m2 - nb * a.m2) / n
    )
    return MomentSketch(n, mean, m2, m3)


def merge_all(sketches: Iterable[MomentSketch]) -> MomentSketch:
    return reduce(merge, sketches, EMPTY)


def sketch_of(values: Sequence[float] | np.ndarray) -> MomentSketch:
    """Two-pass sketch of a whole array (the batch path used by clients)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return EMPTY
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("values contain NaN or infinity")
    mean = float(x.mean())
    d = x - mean
    return MomentSketch(int(x.size), mean, float(np.dot(d, d)), float(np.dot(d * d, d)))


def variance(sketch: MomentSketch, ddof: int = 0) -> float:
    if sketch.n - ddof <= 0:
        raise InsufficientSamples(f"need more than {ddof} samples for variance")
    return sketch.m2 / (sketch.n - ddof)


def skewness(sketch: MomentSketch, convention: str = ADJUSTED) -> float:
    """Sample skewness; ``adjusted`` is the Fisher-Pearson G1 default."""
    n = sketch.n
    if n < 3:
        raise InsufficientSamples(f"skewness needs n >= 3, got {n}")
    if sketch.m2 <= 0.0:
        raise DegenerateDistribution("zero variance")
    g1 = (sketch.m3 / n) / (sketch.m2 / n) ** 1.5
    if convention == MOMENT_G1:
        return g1
    if convention == ADJUSTED:
        return g1 * math.sqrt(n * (n - 1)) / (n - 2)
    raise ValueError(f"unknown skewness convention {convention!r}")


@dataclass(frozen=True)
class FeatureStats:
    name: str
    sketch: MomentSketch
    min: float
    max: float

    @classmethod
    def of(cls, name: str, values) -> FeatureStats:
        x = np.asarray(values, dtype=np.float64)
        if x.size == 0:
            return cls(name, EMPTY, math.inf, -math.inf)
        return cls(name, sketch_of(x), float(x.min()), float(x.max()))

    def merged(self, other: FeatureStats) -> FeatureStats:
        if other.name != self.name:
            raise ValueError(f"cannot merge stats of {self.name!r} and {other.name!r}")
        return FeatureStats(
            self.name, merge(self.sketch, other.sketch), min(self.min, other.min), max(self.max, other.max)
        )


@dataclass(frozen=True)
class HistogramCounts:
    counts: np.ndarray
    underflow: int = 0
    overflow: int = 0


def histogram(values, bins: int, value_range: tuple[float, float]) -> HistogramCounts:
    """Equal-width bins over ``[lo, hi]``; the last bin is closed on the right."""
    lo, hi = float(value_range[0]), float(value_range[1])
    if bins < 1 or not (lo < hi) or not (math.isfinite(lo) and math.isfinite(hi)):
        raise InvalidRange(f"need bins >= 1 and lo < hi, got bins={bins}, range=({lo}, {hi})")
    x = np.asarray(values, dtype=np.float64).ravel()
    under = int(np.count_nonzero(x < lo))
    over = int(np.count_nonzero(x > hi))
    inside = x[(x >= lo) & (x <= hi)]
    idx = np.floor((inside - lo) / (hi - lo) * bins).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    return HistogramCounts(np.bincount(idx, minlength=bins).astype(np.int64), under, over)
