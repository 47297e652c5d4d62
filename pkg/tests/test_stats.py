import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedlens.errors import DegenerateDistribution, InsufficientSamples, InvalidRange, NonFiniteInput
from fedlens.stats import (
    ADJUSTED,
    EMPTY,
    MOMENT_G1,
    FeatureStats,
    MomentSketch,
    accumulate,
    histogram,
    merge,
    merge_all,
    sketch_of,
    skewness,
    variance,
)


def exact_moments(values):
    """Oracle: central moments in exact rational arithmetic."""
    xs = [Fraction(v) for v in values]
    n = len(xs)
    mean = sum(xs) / n
    return n, float(mean), float(sum((x - mean) ** 2 for x in xs)), float(sum((x - mean) ** 3 for x in xs))


def fold(values):
    s = EMPTY
    for v in values:
        s = accumulate(s, v)
    return s


def close(a: MomentSketch, b: MomentSketch, rel=1e-9, abs_=1e-9):
    return a.n == b.n and all(
        math.isclose(x, y, rel_tol=rel, abs_tol=abs_) for x, y in [(a.mean, b.mean), (a.m2, b.m2), (a.m3, b.m3)]
    )


def test_accumulate_single_point():
    assert accumulate(EMPTY, 5.0) == MomentSketch(1, 5.0, 0.0, 0.0)


@pytest.mark.parametrize("values", [[1, 2, 3, 4], [0, 0, 0, 1]])
def test_accumulate_matches_exact_oracle(values):
    n, mean, m2, m3 = exact_moments(values)
    s = fold(values)
    assert s.n == n
    assert s.mean == pytest.approx(mean, abs=1e-15)
    assert s.m2 == pytest.approx(m2, abs=1e-15)
    assert s.m3 == pytest.approx(m3, abs=1e-15)


def test_frozen_example_values():
    assert (fold([1, 2, 3, 4]).mean, fold([1, 2, 3, 4]).m2) == (2.5, 5.0)
    assert fold([1, 2, 3, 4]).m3 == pytest.approx(0.0, abs=1e-15)
    s = fold([0, 0, 0, 1])
    assert (s.mean, s.m2) == (0.25, 0.75)


def test_accumulate_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        accumulate(EMPTY, float("nan"))
    with pytest.raises(NonFiniteInput):
        sketch_of([1.0, math.inf])


def test_merge_identity_and_concatenation():
    s = fold([3.0, 1.5, -2.0])
    assert merge(s, EMPTY) == s and merge(EMPTY, s) == s
    assert close(merge(fold([1, 2]), fold([3, 4])), MomentSketch(*exact_moments([1, 2, 3, 4])), abs_=1e-15)


def test_merge_symmetric():
    a, b = sketch_of([1.0, 7.0, 2.5]), sketch_of([10.0, -3.0])
    assert close(merge(a, b), merge(b, a), rel=1e-12, abs_=0)


def test_batch_sketch_matches_stream():
    rng = np.random.default_rng(0)
    x = rng.lognormal(size=200) + 1e6
    assert close(sketch_of(x), fold(x), rel=1e-9, abs_=1e-6)


def test_skewness_examples():
    assert skewness(fold([1, 2, 3, 4])) == pytest.approx(0.0, abs=1e-15)
    p = 0.25
    closed_form = (1 - 2 * p) / math.sqrt(p * (1 - p))
    assert skewness(fold([0, 0, 0, 1]), MOMENT_G1) == pytest.approx(closed_form, rel=1e-12)
    assert closed_form == pytest.approx(1.1547, abs=1e-4)
    with pytest.raises(DegenerateDistribution):
        skewness(fold([7, 7, 7, 7]))
    with pytest.raises(InsufficientSamples):
        skewness(fold([1, 2]))


def test_adjusted_matches_scipy_bias_false():
    stats = pytest.importorskip("scipy.stats")
    x = np.random.default_rng(3).gamma(2.0, size=57)
    assert skewness(sketch_of(x), ADJUSTED) == pytest.approx(stats.skew(x, bias=False), rel=1e-10)
    assert skewness(sketch_of(x), MOMENT_G1) == pytest.approx(stats.skew(x, bias=True), rel=1e-10)


def test_variance_ddof():
    s = sketch_of([1.0, 2.0, 3.0, 4.0])
    assert variance(s) == 1.25
    assert variance(s, ddof=1) == pytest.approx(5.0 / 3.0)


def test_feature_stats_merge():
    a = FeatureStats.of("x", [1.0, 5.0])
    b = FeatureStats.of("x", [-2.0, 3.0])
    m = a.merged(b)
    assert (m.min, m.max) == (-2.0, 5.0)
    assert close(m.sketch, sketch_of([1.0, 5.0, -2.0, 3.0]))


# --- histogram ----------------------------------------------------------------------


def test_histogram_examples():
    assert histogram([0.1, 0.9], 2, (0.0, 1.0)).counts.tolist() == [1, 1]
    assert histogram([], 3, (0.0, 1.0)).counts.tolist() == [0, 0, 0]


def test_histogram_uniform_grid_against_direct_bucketing():
    grid = [(i + 0.5) / 100 for i in range(100)]
    oracle = [0] * 10
    for x in grid:
        oracle[int(x * 10)] += 1
    assert histogram(grid, 10, (0.0, 1.0)).counts.tolist() == oracle == [10] * 10


def test_histogram_overflow_and_edges():
    h = histogram([-1.0, 0.0, 1.0, 2.0], 4, (0.0, 1.0))
    assert h.underflow == 1 and h.overflow == 1
    assert h.counts.sum() == 2 and h.counts[-1] == 1


def test_histogram_invalid_range():
    with pytest.raises(InvalidRange):
        histogram([1.0], 2, (1.0, 1.0))
    with pytest.raises(InvalidRange):
        histogram([1.0], 0, (0.0, 1.0))


# --- properties ---------------------------------------------------------------------

_vals = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40)


@given(a=_vals, b=_vals, c=_vals)
def test_merge_commutative_associative(a, b, c):
    sa, sb, sc = sketch_of(a), sketch_of(b), sketch_of(c)
    assert close(merge(sa, sb), merge(sb, sa), rel=1e-9, abs_=1e-6)
    assert close(merge(merge(sa, sb), sc), merge(sa, merge(sb, sc)), rel=1e-9, abs_=1e-6)


@given(values=st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=80), data=st.data())
def test_split_fold_equals_whole(values, data):
    cuts = sorted(data.draw(st.lists(st.integers(0, len(values)), max_size=5)))
    parts = np.split(np.asarray(values), cuts)
    assert close(merge_all(sketch_of(p) for p in parts), sketch_of(values), rel=1e-9, abs_=1e-6)


@given(s=_vals, x=st.floats(-1e3, 1e3, allow_nan=False))
def test_accumulate_equals_merge_singleton(s, x):
    base = sketch_of(s)
    assert close(accumulate(base, x), merge(base, MomentSketch.singleton(x)), rel=1e-12, abs_=1e-7)


@given(
    seed=st.integers(0, 2**32 - 1),
    a=st.floats(0.01, 100.0) | st.floats(-100.0, -0.01),
    b=st.floats(-1e3, 1e3),
    convention=st.sampled_from([ADJUSTED, MOMENT_G1]),
)
def test_skewness_affine_behaviour(seed, a, b, convention):
    x = np.random.default_rng(seed).gamma(2.0, size=50)
    base = skewness(sketch_of(x), convention)
    moved = skewness(sketch_of(a * x + b), convention)
    assert moved == pytest.approx(math.copysign(1.0, a) * base, abs=1e-9)
