"""Aggregation strategies over an attribution stack.

Baselines: ``mean`` (uniform weights) and ``var`` (feature-wise
disagreement-discounted mean).  Optimized strategies solve the simplex QP
for one or more Gram matrices: ``robust`` (average sensitivity), ``faith``
(infidelity), ``opt`` (both, each scaled by its Frobenius norm) and
``custom`` (any weighted list of sample sets).
"""
from dataclasses import dataclass, field

import numpy as np

from .core import AttributionMap, SimplexWeights, aggregate_linear, normalize
from .errors import InvalidInput
from .metrics import (aggregate_samples, column_samples, estimate, gamma_matrices, gram,
                      perturbed_stacks, sensitivity_samples_from_stacks,
                      build_infidelity_samples)
from .perturb import sample_masks
from .qp import solve

STRATEGY_KINDS = ("mean", "var", "robust", "faith", "opt", "custom")
VAR_EPSILON = 1e-6


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    var_epsilon: float = VAR_EPSILON
    custom: tuple = ()
    frobenius_normalize: bool = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise InvalidInput(f"unknown strategy {self.kind!r}")
        if not self.var_epsilon > 0:
            raise InvalidInput("var_epsilon must be positive")
        if self.kind == "custom":
            if not self.custom:
                raise InvalidInput("custom strategy needs at least one (samples, lambda) pair")
            if any(lam < 0 for _, lam in self.custom):
                raise InvalidInput("metric weights lambda must be non-negative")
        if not self.name:
            object.__setattr__(self, "name", f"AGG_{self.kind}")

    @property
    def optimized(self):
        return self.kind in ("robust", "faith", "opt", "custom")


@dataclass(frozen=True, eq=False)
class AggregationResult:
    strategy: StrategySpec
    map: AttributionMap
    weights: SimplexWeights = None
    solution: object = None
    Q: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)


def agg_mean(stack):
    w = SimplexWeights.uniform(stack.k)
    return AggregationResult(StrategySpec("mean"), aggregate_linear(stack, w), w)


def var_map(stack, epsilon=VAR_EPSILON):
    """``(1/k) sum_i phi_i / (sigma + eps)`` max-rescaled to [0, 1]."""
    if not epsilon > 0:
        raise InvalidInput("epsilon must be positive")
    M = stack.matrix
    # shifted moments: identical columns give sigma == 0 exactly
    dev = M - M[:, :1]
    shift = dev.mean(axis=1)
    sigma = np.sqrt(np.maximum((dev * dev).mean(axis=1) - shift * shift, 0.0))
    raw = (M[:, 0] + shift) / (sigma + epsilon)
    return normalize(raw, stack.shape)


def agg_var(stack, epsilon=VAR_EPSILON):
    spec = StrategySpec("var", var_epsilon=epsilon)
    return AggregationResult(spec, var_map(stack, epsilon), None,
                             diagnostics={"weights": "not applicable"})


def combined_gram(stack, sample_sets, lambdas=None, frobenius_normalize=False):
    """``sum_j lambda_j Q_j`` with optional Frobenius scaling of each ``Q_j``."""
    lambdas = lambdas or [1.0] * len(sample_sets)
    total = np.zeros((stack.k, stack.k))
    norms = []
    for samples, lam in zip(sample_sets, lambdas):
        G = gram(samples, stack)
        norms.append(G.frobenius_norm)
        if frobenius_normalize:
            if G.frobenius_norm > 0:
                total += lam * G.Q / G.frobenius_norm
        else:
            total += lam * G.Q
    return total, norms


def agg_optimize(stack, strategy, sample_sets, solver_config=None):
    """Solve the simplex QP for the strategy's metric(s).

    ``sample_sets`` lists the metric samples in the order the strategy
    expects: ``[sens]`` for robust, ``[infd]`` for faith, ``[infd, sens]``
    for opt.  Custom strategies carry their own list.
    """
    if strategy.kind == "custom":
        sets = [s for s, _ in strategy.custom]
        lambdas = [lam for _, lam in strategy.custom]
    else:
        sets = list(sample_sets)
        lambdas = [1.0] * len(sets)
        expected = {"robust": 1, "faith": 1, "opt": 2}.get(strategy.kind)
        if expected is None:
            raise InvalidInput(f"{strategy.kind} is not an optimized strategy")
        if len(sets) != expected:
            raise InvalidInput(f"{strategy.kind} needs {expected} sample set(s), got {len(sets)}")
    frob = strategy.frobenius_normalize
    if frob is None:
        frob = len(sets) > 1
    Q, norms = combined_gram(stack, sets, lambdas, frob)
    diagnostics = {"frobenius_norms": norms, "frobenius_normalize": frob}
    if all(n == 0 for n in norms):
        w = SimplexWeights.uniform(stack.k)
        diagnostics["degenerate"] = "all Gram matrices are zero"
        return AggregationResult(strategy, aggregate_linear(stack, w), w, None, Q, diagnostics)
    sol = solve(Q, solver_config)
    diagnostics["converged"] = sol.converged
    diagnostics["kkt_residual"] = sol.kkt_residual
    return AggregationResult(strategy, aggregate_linear(stack, sol.omega), sol.omega, sol, Q,
                             diagnostics)


def aggregate(stack, strategy, sens=None, infd=None, solver_config=None):
    """Dispatch any strategy; optimized kinds pull the sample sets they need."""
    if isinstance(strategy, str):
        strategy = StrategySpec(strategy)
    if strategy.kind == "mean":
        return agg_mean(stack)
    if strategy.kind == "var":
        return agg_var(stack, strategy.var_epsilon)
    needed = {"robust": [sens], "faith": [infd], "opt": [infd, sens], "custom": []}[strategy.kind]
    if any(s is None for s in needed):
        raise InvalidInput(f"{strategy.kind} needs sample sets that were not provided")
    return agg_optimize(stack, strategy, needed, solver_config)


@dataclass(frozen=True)
class IdentityReport:
    lhs: float
    weighted_sum: float
    ambiguity: float
    residual: float

    @property
    def ok(self):
        return (self.ambiguity >= -1e-12
                and self.residual <= 1e-8 * max(1.0, self.weighted_sum))


def spread_decomposition(stack, omega, samples):
    """Check ``Q(phi_w) = sum_i w_i Q(phi_i) - ambiguity`` on one sample set.

    ``lhs`` is evaluated directly on the aggregated map, ``weighted_sum``
    per method, and the ambiguity from the ``Gamma`` columns.
    """
    w = np.asarray(omega, dtype=np.float64)
    SimplexWeights(w)
    lhs = estimate(aggregate_samples(samples, w), aggregate_linear(stack, w))
    weighted_sum = sum(w[i] * estimate(column_samples(samples, i), stack.column(i).values)
                       for i in range(stack.k))
    amb = 0.0
    for G in gamma_matrices(samples, stack):
        Gw = G @ w
        dev = G - Gw[:, None]
        amb += float(np.sum(w * np.einsum("gk,gk->k", dev, dev)))
    amb /= samples.m
    residual = abs(lhs - (weighted_sum - amb))
    return IdentityReport(lhs, weighted_sum, amb, residual)


@dataclass(frozen=True, eq=False)
class RegretReport:
    m_grid: tuple
    median_regret: np.ndarray
    regrets: np.ndarray
    trials: int
    pool_size: int
    pool_optimum: float

    def inversions(self):
        med = self.median_regret
        return int(np.sum(med[1:] > med[:-1]))


def _draw_samples(kind, n, rng, stack_fn, x, noise, model, mask_spec, baseline):
    if kind == "sens":
        inputs, stacks = perturbed_stacks(stack_fn, x, noise, n, rng)
        return sensitivity_samples_from_stacks(stacks, inputs)
    masks = sample_masks(mask_spec, stack_fn.shape, rng, n)
    return build_infidelity_samples(model, x, masks, baseline)


def _outer_products(samples, stack):
    return np.array([G.T @ G for G in gamma_matrices(samples, stack)])


def regret_study(stack_fn, x, kind, m_grid, trials, pool_size, rng, noise=None,
                 model=None, mask_spec=None, baseline=None, solver_config=None):
    """Generalization gap of weights fitted on ``m`` samples, measured on a fixed pool.

    ``kind`` is ``"sens"`` (needs ``noise``) or ``"infd"`` (needs ``model``,
    ``mask_spec`` and a baseline vector).  Each trial draws ``max(m_grid)``
    fresh samples and fits on nested prefixes.  Grid entries at or above
    the pool size fit on the pool itself.
    """
    if kind not in ("sens", "infd"):
        raise InvalidInput("regret study kind must be 'sens' or 'infd'")
    m_grid = tuple(int(m) for m in m_grid)
    base = stack_fn(x)
    draw = dict(stack_fn=stack_fn, x=x, noise=noise, model=model, mask_spec=mask_spec,
                baseline=baseline)
    pool = _draw_samples(kind, pool_size, rng.child(0), **draw)
    pool_outer = _outer_products(pool, base)
    Q_pool = pool_outer.mean(axis=0)
    Q_pool = 0.5 * (Q_pool + Q_pool.T)
    best = solve(Q_pool, solver_config).objective
    fresh_max = max([m for m in m_grid if m < pool_size], default=0)
    regrets = np.zeros((trials, len(m_grid)))
    for t in range(trials):
        if fresh_max:
            outer = _outer_products(_draw_samples(kind, fresh_max, rng.child(1, t), **draw), base)
            csum = np.cumsum(outer, axis=0)
        for col, m in enumerate(m_grid):
            Q_m = Q_pool if m >= pool_size else csum[m - 1] / m
            w = solve(0.5 * (Q_m + Q_m.T), solver_config).omega.omega
            regrets[t, col] = float(w @ Q_pool @ w) - best
    return RegretReport(m_grid, np.median(regrets, axis=0), regrets, trials, pool_size, best)
