import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from optagg import (AttributionMap, AttributionStack, InvalidInput, Rng, Shape, SimplexWeights,
                    aggregate_linear, normalize)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def stack_of(*cols):
    cols = [np.asarray(c, float) for c in cols]
    return AttributionStack(Shape(1, len(cols[0])), tuple(f"m{i}" for i in range(len(cols))),
                            np.column_stack(cols))


def test_shape_dimension_and_validation():
    assert Shape(16, 16, 3).d == 768
    with pytest.raises(InvalidInput):
        Shape(0, 4)


def test_normalize_examples():
    assert normalize([-2, 1, 0], Shape(1, 3)).values.tolist() == [1.0, 0.5, 0.0]
    z = normalize([0, 0, 0], Shape(1, 3))
    assert z.values.tolist() == [0, 0, 0] and z.normalized


def test_normalize_random_against_direct_recomputation():
    raw = Rng(1).normal(256)
    out = normalize(raw, Shape(16, 16)).values
    expected = np.array([abs(v) for v in raw]) / max(abs(v) for v in raw)
    assert out.max() == 1.0 and out.min() >= 0
    np.testing.assert_array_equal(out, expected)


def test_normalize_rejects_non_finite():
    with pytest.raises(InvalidInput):
        normalize([1.0, np.nan], Shape(1, 2))


@given(arrays(np.float64, 12, elements=finite))
@settings(max_examples=100, deadline=None)
def test_normalized_range_property(raw):
    v = normalize(raw, Shape(3, 4)).values
    assert v.min() >= 0 and v.max() <= 1 and v.max() in (0.0, 1.0)


def test_normalized_flag_is_enforced():
    with pytest.raises(InvalidInput):
        AttributionMap(Shape(1, 2), [0.5, 1.5], normalized=True)
    with pytest.raises(InvalidInput):
        AttributionMap(Shape(1, 2), [0.5])


def test_stack_validation():
    with pytest.raises(InvalidInput):
        AttributionStack(Shape(1, 2), ("a", "a"), np.ones((2, 2)))
    with pytest.raises(InvalidInput):
        AttributionStack(Shape(1, 2), (), np.ones((2, 0)))
    s = stack_of([1, 0], [0, 1])
    assert s.k == 2 and s.normalized and s.select([1]).method_names == ("m1",)


def test_simplex_weights():
    w = SimplexWeights([0.5, 0.5 - 1e-13, 1e-13])
    assert w.omega[2] == 0.0
    with pytest.raises(InvalidInput):
        SimplexWeights([1.1, -0.1])
    with pytest.raises(InvalidInput):
        SimplexWeights([0.5, 0.4])
    np.testing.assert_allclose(SimplexWeights.uniform(4).omega, 0.25)


def test_aggregate_linear_examples():
    col = [0.2, 0.7, 1.0]
    assert aggregate_linear(stack_of(col), SimplexWeights([1.0])).values.tolist() == col
    np.testing.assert_allclose(aggregate_linear(stack_of(col, col), [0.3, 0.7]).values, col)
    out = aggregate_linear(stack_of([1, 0], [0, 1]), SimplexWeights([0.25, 0.75]))
    assert out.values.tolist() == [0.25, 0.75] and not out.normalized
    with pytest.raises(InvalidInput):
        aggregate_linear(stack_of([1, 0], [0, 1]), [1.0])


@given(st.integers(0, 2**32), st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_aggregate_linear_is_affine(seed, alpha):
    r = Rng(seed)
    s = AttributionStack(Shape(2, 5), tuple("abcd"), r.random(40).reshape(10, 4))
    w1, w2 = r.random(4), r.random(4)
    w1, w2 = w1 / w1.sum(), w2 / w2.sum()
    lhs = aggregate_linear(s, alpha * w1 + (1 - alpha) * w2).values
    rhs = alpha * aggregate_linear(s, w1).values + (1 - alpha) * aggregate_linear(s, w2).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12, rtol=0)


def test_rng_uniform_examples():
    assert np.array_equal(Rng(42).uniform(0, 1, 4), Rng(42).uniform(0, 1, 4))
    v = Rng(42).uniform(-0.1, 0.1, 100_000)
    assert abs(v.mean()) <= 0.003
