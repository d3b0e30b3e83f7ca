import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optagg import InvalidInput, Rng, Shape
from optagg.aggregation import (StrategySpec, agg_mean, agg_optimize, agg_var, aggregate,
                                combined_gram, regret_study, spread_decomposition, var_map)
from optagg.attributions import AttributionMethodSpec, StackFunction
from optagg.core import AttributionStack, SimplexWeights, aggregate_linear
from optagg.metrics import (LinearQuery, MetricSample, MetricSampleSet, build_infidelity_samples,
                            build_sensitivity_samples, gram)
from optagg.models import ToyMlp
from optagg.perturb import NoiseSpec, RegionMaskSpec, sample_masks

S2 = Shape(1, 2)
S8 = Shape(8, 8)


def stack_of(matrix, shape=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    shape = shape or Shape(1, matrix.shape[0])
    return AttributionStack(shape, tuple(f"m{i}" for i in range(matrix.shape[1])), matrix)


def pipeline():
    mlp = ToyMlp.random([64, 8, 1], 5)
    roster = [AttributionMethodSpec("saliency"), AttributionMethodSpec("input_x_grad"),
              AttributionMethodSpec("smoothgrad", sg_samples=5),
              AttributionMethodSpec("occlusion", occlusion_patch=(2, 2))]
    sf = StackFunction(mlp, roster, S8)
    x = Rng(2).random(64)
    stack = sf(x)
    sens = build_sensitivity_samples(sf, x, NoiseSpec(0.1), 15, Rng(3))
    masks = sample_masks(RegionMaskSpec("square", 0.2), S8, Rng(4), 30)
    infd = build_infidelity_samples(mlp, x, masks, np.zeros(64), stack)
    return mlp, sf, x, stack, sens, infd


def test_mean_examples():
    assert agg_mean(stack_of([[1, 0], [0, 1]])).map.values.tolist() == [0.5, 0.5]
    one = stack_of([[0.2], [0.7]])
    assert agg_mean(one).map.values.tolist() == [0.2, 0.7]
    M = Rng(0).random(50).reshape(10, 5)
    np.testing.assert_array_equal(agg_mean(stack_of(M)).map.values,
                                  aggregate_linear(stack_of(M), SimplexWeights.uniform(5)).values)


def test_var_examples():
    col = np.array([0.1, 0.5, 1.0])
    same = stack_of(np.column_stack([col, col, col]))
    np.testing.assert_allclose(var_map(same).values, col / col.max(), rtol=1e-12)
    res = agg_var(stack_of([[1, 0], [0, 1]]))
    assert res.map.values.tolist() == [1.0, 1.0]
    assert res.weights is None and res.diagnostics["weights"] == "not applicable"
    # loop oracle for the pre-rescale value
    sigma, mean = 0.5, 0.5
    assert mean / (sigma + 1e-6) == pytest.approx(0.5 / 0.500001)
    M = Rng(1).random(40).reshape(10, 4)
    big = var_map(stack_of(M), 1e6).values
    plain = M.mean(axis=1)
    np.testing.assert_allclose(big, plain / plain.max(), rtol=1e-6)
    with pytest.raises(InvalidInput):
        var_map(same, 0.0)


def test_strategy_spec_validation():
    with pytest.raises(InvalidInput):
        StrategySpec("median")
    with pytest.raises(InvalidInput):
        StrategySpec("custom")
    with pytest.raises(InvalidInput):
        StrategySpec("var", var_epsilon=0)
    dummy = MetricSampleSet((MetricSample(LinearQuery.identity(), [0.0]),))
    with pytest.raises(InvalidInput):
        StrategySpec("custom", custom=((dummy, -1.0),))
    assert StrategySpec("opt").name == "AGG_opt" and StrategySpec("opt").optimized
    assert not StrategySpec("var").optimized


def test_optimized_k1_is_identity_weight():
    stack = stack_of([[0.3], [0.9]])
    samples = MetricSampleSet((MetricSample(LinearQuery.identity(), [1.0, 0.0]),))
    for kind in ("robust", "faith"):
        res = aggregate(stack, kind, sens=samples, infd=samples)
        assert res.weights.omega.tolist() == [1.0]


def test_optimized_dominates_vertices():
    _, _, _, stack, sens, infd = pipeline()
    for kind in ("robust", "faith", "opt"):
        res = aggregate(stack, kind, sens=sens, infd=infd)
        w = res.weights.omega
        assert w @ res.Q @ w <= np.min(np.diag(res.Q)) + 1e-9
        assert res.diagnostics["converged"]


def test_duplicated_best_column():
    _, _, _, stack, sens, _ = pipeline()
    Q = gram(sens, stack).Q
    best = int(np.argmin(np.diag(Q)))
    dup = AttributionStack(stack.shape, stack.method_names + ("dup",),
                           np.column_stack([stack.matrix, stack.matrix[:, best]]))
    from optagg.metrics import MetricSample as MS
    sens_dup = MetricSampleSet(tuple(MS(s.gamma1, np.column_stack([s.gamma2, s.gamma2[:, best]]), True)
                                     for s in sens.samples))
    res = aggregate(dup, "robust", sens=sens_dup)
    w = res.weights.omega
    assert w @ res.Q @ w <= np.min(np.diag(gram(sens_dup, dup).Q)) + 1e-9


def test_opt_uses_frobenius_normalization():
    _, _, _, stack, sens, infd = pipeline()
    Q, norms = combined_gram(stack, [infd, sens], frobenius_normalize=True)
    Qi, Qs = gram(infd, stack), gram(sens, stack)
    np.testing.assert_allclose(Q, Qi.Q / Qi.frobenius_norm + Qs.Q / Qs.frobenius_norm, rtol=1e-14)
    res = aggregate(stack, "opt", sens=sens, infd=infd)
    np.testing.assert_allclose(res.Q, Q, rtol=1e-14)
    assert res.diagnostics["frobenius_normalize"] is True
    assert aggregate(stack, "robust", sens=sens).diagnostics["frobenius_normalize"] is False


def test_custom_strategy_matches_robust():
    _, _, _, stack, sens, _ = pipeline()
    custom = StrategySpec("custom", custom=((sens, 1.0),))
    a = aggregate(stack, custom).weights.omega
    b = aggregate(stack, "robust", sens=sens).weights.omega
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_missing_samples_and_bad_counts():
    _, _, _, stack, sens, infd = pipeline()
    with pytest.raises(InvalidInput):
        aggregate(stack, "faith", sens=sens)
    with pytest.raises(InvalidInput):
        agg_optimize(stack, StrategySpec("opt"), [infd])
    with pytest.raises(InvalidInput):
        agg_optimize(stack, StrategySpec("mean"), [])


def test_all_zero_gram_is_degenerate_uniform():
    M = Rng(0).random(6).reshape(3, 2)
    stack = stack_of(M)
    samples = MetricSampleSet((MetricSample(LinearQuery.identity(), M, per_method=True),))
    res = aggregate(stack, "robust", sens=samples)
    assert res.weights.omega.tolist() == [0.5, 0.5]
    assert "degenerate" in res.diagnostics


def test_identity_examples():
    _, _, _, stack, sens, infd = pipeline()
    one = stack.select([0])
    r = spread_decomposition(one, [1.0], sens.__class__(tuple(
        MetricSample(s.gamma1, s.gamma2[:, :1], True) for s in sens.samples)))
    assert r.ambiguity == 0 and r.residual <= 1e-12 * max(1.0, r.lhs)
    col = stack.matrix[:, 1]
    same = stack_of(np.column_stack([col, col]), S8)
    r = spread_decomposition(same, [0.3, 0.7], infd)
    assert abs(r.ambiguity) <= 1e-15 * max(1.0, r.lhs) and r.ok


@pytest.mark.parametrize("which", ["sens", "infd"])
def test_identity_random_weights(which):
    _, _, _, stack, sens, infd = pipeline()
    samples = sens if which == "sens" else infd
    rng = Rng(17)
    for _ in range(10):
        w = rng.random(stack.k)
        w /= w.sum()
        r = spread_decomposition(stack, w, samples)
        assert r.residual <= 1e-8 * max(1.0, r.weighted_sum)
        assert r.ambiguity >= -1e-12
        assert r.ok
    for kind in ("robust", "faith", "opt"):
        w = aggregate(stack, kind, sens=sens, infd=infd).weights.omega
        assert spread_decomposition(stack, w, samples).ok


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_strategies_permutation_equivariant(seed, k):
    rng = Rng(seed)
    d = 8
    M = rng.random(d * k).reshape(d, k)
    stack = stack_of(M)
    samples = MetricSampleSet(tuple(MetricSample(LinearQuery.identity(), rng.random(d * k).reshape(d, k), True)
                                    for _ in range(4)))
    perm = np.argsort(rng.random(k))
    pstack = stack_of(M[:, perm])
    psamples = MetricSampleSet(tuple(MetricSample(s.gamma1, s.gamma2[:, perm], True) for s in samples.samples))
    np.testing.assert_allclose(agg_mean(pstack).map.values, agg_mean(stack).map.values, atol=1e-15)
    np.testing.assert_allclose(agg_var(pstack).map.values, agg_var(stack).map.values, atol=1e-12)
    a = aggregate(stack, "robust", sens=samples)
    b = aggregate(pstack, "robust", sens=psamples)
    assert b.solution.objective == pytest.approx(a.solution.objective, rel=1e-10, abs=1e-14)
    np.testing.assert_allclose(b.map.values, a.map.values, atol=1e-6)


def _regret_pipeline():
    mlp = ToyMlp.random([16, 6, 1], 3)
    roster = [AttributionMethodSpec("saliency", normalize_output=False),
              AttributionMethodSpec("input_x_grad", normalize_output=False),
              AttributionMethodSpec("occlusion", occlusion_patch=(2, 2), normalize_output=False)]
    return mlp, StackFunction(mlp, roster, Shape(4, 4)), Rng(1).random(16)


def test_regret_degenerate_and_nonnegative():
    _, sf, x = _regret_pipeline()
    rep = regret_study(sf, x, "sens", (5, 30), 3, 30, Rng(0), noise=NoiseSpec(0.1))
    assert rep.regrets.shape == (3, 2)
    assert np.all(rep.regrets >= -1e-9)
    assert np.all(np.abs(rep.regrets[:, 1]) <= 1e-9)


def test_regret_infd_trend():
    mlp, sf, x = _regret_pipeline()
    rep = regret_study(sf, x, "infd", (5, 20, 80), 15, 400, Rng(2), model=mlp,
                       mask_spec=RegionMaskSpec("scattered", 0.25), baseline=np.zeros(16))
    assert np.all(rep.regrets >= -1e-9)
    assert rep.median_regret[-1] <= rep.median_regret[0]
    with pytest.raises(InvalidInput):
        regret_study(sf, x, "fcor", (5,), 1, 10, Rng(0))
