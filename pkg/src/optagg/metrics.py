"""Generalized L2 metrics ``E ||gamma1 phi - gamma2||^2`` and evaluation-only metrics.

A metric is represented empirically by a :class:`MetricSampleSet` of
``(gamma1, gamma2)`` draws.  For a stack ``Phi`` the per-sample matrix
``Gamma`` has column ``i`` equal to ``gamma1 @ phi_i - gamma2_i``, and
``omega' Q omega`` with ``Q = mean(Gamma' Gamma)`` is the metric of the
convex combination ``Phi @ omega``.

Sensitivity samples carry a *per-method* ``gamma2`` (column ``i`` is method
``i`` evaluated at the perturbed input).  Because weights sum to one,
``Gamma @ omega = gamma1 phi^omega - (perturbed stack) @ omega``, so the
same Gram construction applies; with a shared ``gamma2`` this reduces to
stacking ``k`` copies.
"""
from dataclasses import dataclass, field

import numpy as np

from .attributions import compute_attribution
from .core import AttributionMap, AttributionStack, SimplexWeights
from .errors import DegenerateCorrelation, InvalidInput, Unsupported
from .models import randomize_parameters
from .perturb import apply_h, sample_noise


@dataclass(frozen=True, eq=False)
class LinearQuery:
    """``gamma1``: one of identity, row mask (1 x d), dense (g x d) or 0/1 diagonal."""

    kind: str
    data: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("identity", "rowmask", "dense", "diagonal"):
            raise InvalidInput(f"unknown query kind {self.kind!r}")
        if self.kind != "identity":
            data = np.array(self.data, dtype=np.float64)
            if not np.all(np.isfinite(data)):
                raise InvalidInput("query entries must be finite")
            if self.kind in ("rowmask", "diagonal"):
                data = data.ravel()
                if not np.all((data == 0) | (data == 1)):
                    raise InvalidInput(f"{self.kind} entries must be 0 or 1")
            elif data.ndim != 2:
                raise InvalidInput("dense query must be a matrix")
            data.setflags(write=False)
            object.__setattr__(self, "data", data)

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def rowmask(cls, mask):
        return cls("rowmask", mask)

    @classmethod
    def dense(cls, matrix):
        return cls("dense", matrix)

    @classmethod
    def diagonal(cls, indicator):
        return cls("diagonal", indicator)

    def rows(self, d):
        if self.kind == "rowmask":
            return 1
        if self.kind == "dense":
            return self.data.shape[0]
        return d

    def apply(self, M):
        """``gamma1 @ M`` for a length-d vector or a d x k matrix."""
        M = np.asarray(M, dtype=np.float64)
        if self.kind == "identity":
            return M
        if self.kind == "rowmask":
            return (self.data @ M)[None, ...]
        if self.kind == "diagonal":
            return self.data.reshape((-1,) + (1,) * (M.ndim - 1)) * M
        return self.data @ M


@dataclass(frozen=True, eq=False)
class MetricSample:
    gamma1: LinearQuery
    gamma2: np.ndarray
    per_method: bool = False

    def __post_init__(self):
        g2 = np.array(self.gamma2, dtype=np.float64)
        if self.per_method and g2.ndim != 2:
            raise InvalidInput("per-method gamma2 must be g x k")
        if not self.per_method:
            g2 = g2.reshape(-1)
        g2.setflags(write=False)
        object.__setattr__(self, "gamma2", g2)

    def residual(self, M):
        """``gamma1 @ M - gamma2`` (columnwise for a matrix)."""
        q = self.gamma1.apply(M)
        if self.per_method:
            return q - self.gamma2
        if q.ndim == 2:
            return q - self.gamma2[:, None]
        return q - self.gamma2


@dataclass(frozen=True, eq=False)
class MetricSampleSet:
    samples: tuple
    label: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise InvalidInput("a metric sample set needs m >= 1 samples")
        object.__setattr__(self, "samples", samples)

    @property
    def m(self):
        return len(self.samples)

    @property
    def per_method(self):
        return any(s.per_method for s in self.samples)

    def subset(self, indices):
        return MetricSampleSet(tuple(self.samples[i] for i in indices), self.label)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    Q: np.ndarray
    m_used: int
    frobenius_norm: float

    @classmethod
    def from_matrix(cls, Q, m_used=0):
        Q = np.array(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise InvalidInput("Gram matrix must be square")
        Q.setflags(write=False)
        return cls(Q, m_used, float(np.linalg.norm(Q, "fro")))

    @property
    def k(self):
        return self.Q.shape[0]

    def quadratic(self, omega):
        w = np.asarray(omega, dtype=np.float64)
        return float(w @ self.Q @ w)


def _check_compatible(samples, stack):
    for s in samples.samples:
        if s.per_method and s.gamma2.shape[1] != stack.k:
            raise InvalidInput(f"per-method gamma2 has {s.gamma2.shape[1]} columns, stack has {stack.k}")


def gamma_matrices(samples, stack):
    """Per-sample ``Gamma`` matrices (each g x k), in sample order."""
    _check_compatible(samples, stack)
    return [s.residual(stack.matrix) for s in samples.samples]


def gram(samples, stack):
    """``Q = (1/m) sum_j Gamma_j' Gamma_j``, accumulated in sample order."""
    Q = np.zeros((stack.k, stack.k))
    for G in gamma_matrices(samples, stack):
        Q += G.T @ G
    Q /= samples.m
    return GramMatrix.from_matrix(0.5 * (Q + Q.T), samples.m)


def estimate(samples, attribution):
    """Empirical metric ``(1/m) sum_j ||gamma1_j phi - gamma2_j||^2`` of one map."""
    if samples.per_method:
        raise Unsupported("per-method gamma2 has no meaning for an arbitrary map; "
                          "use aggregate_samples or the Gram form")
    phi = attribution.values if isinstance(attribution, AttributionMap) else np.asarray(attribution)
    total = 0.0
    for s in samples.samples:
        r = s.residual(phi)
        total += float(r @ r)
    return total / samples.m


def aggregate_samples(samples, omega):
    """Collapse per-method ``gamma2`` to the aggregate's own ``gamma2 @ omega``."""
    w = np.asarray(omega, dtype=np.float64)
    out = []
    for s in samples.samples:
        if s.per_method:
            out.append(MetricSample(s.gamma1, s.gamma2 @ w))
        else:
            out.append(s)
    return MetricSampleSet(tuple(out), samples.label)


def column_samples(samples, i):
    """Shared-``gamma2`` view of a sample set for method ``i`` alone."""
    out = []
    for s in samples.samples:
        out.append(MetricSample(s.gamma1, s.gamma2[:, i]) if s.per_method else s)
    return MetricSampleSet(tuple(out), samples.label)


# -- sample construction ----------------------------------------------------

def perturbed_stacks(stack_fn, x, noise, m, rng):
    """``m`` noise draws and the stacks recomputed at ``x + eps``."""
    if m < 1:
        raise InvalidInput("need m >= 1 perturbation samples")
    x = np.asarray(x, dtype=np.float64)
    shape = stack_fn.shape
    inputs, stacks = [], []
    for _ in range(m):
        xp = x + sample_noise(noise, shape, rng)
        inputs.append(xp)
        stacks.append(stack_fn(xp))
    return np.array(inputs), stacks


def sensitivity_samples_from_stacks(stacks, inputs=None):
    samples = tuple(MetricSample(LinearQuery.identity(), st.matrix, per_method=True) for st in stacks)
    extras = {"inputs": inputs, "stacks": list(stacks)}
    return MetricSampleSet(samples, "SENS_AVG", extras)


def build_sensitivity_samples(stack_fn, x, noise, m, rng):
    """Average-sensitivity samples: identity query, per-method ``phi_i(x + eps)``."""
    inputs, stacks = perturbed_stacks(stack_fn, x, noise, m, rng)
    return sensitivity_samples_from_stacks(stacks, inputs)


def prediction_drops(model, x, masks, baseline):
    """``f(x) - f(h(x, x_b, I_j))`` for each mask row."""
    x = np.asarray(x, dtype=np.float64)
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    scores = model.predict_batch(np.vstack([x[None, :], apply_h(x, baseline, masks)]))
    return scores[0] - scores[1:]


def build_infidelity_samples(model, x, masks, baseline, stack=None):
    """Infidelity samples: ``gamma1 = I'`` and shared ``gamma2 = f(x) - f(h(x, x_b, I))``."""
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    if stack is not None and masks.shape[1] != stack.shape.d:
        raise InvalidInput("mask length does not match stack shape")
    drops = prediction_drops(model, x, masks, baseline)
    samples = tuple(MetricSample(LinearQuery.rowmask(I), [dy]) for I, dy in zip(masks, drops))
    return MetricSampleSet(samples, "INFD", {"masks": masks, "drops": drops})


def alignment_samples(target=None, region=None):
    """Single-sample alignment metric against a target map or a region of interest."""
    if (target is None) == (region is None):
        raise InvalidInput("give exactly one of target or region")
    if target is not None:
        values = target.values if isinstance(target, AttributionMap) else np.asarray(target, float)
        return MetricSampleSet((MetricSample(LinearQuery.identity(), values),), "ALIGN")
    region = np.asarray(region, dtype=np.float64).ravel()
    g1 = LinearQuery.dense(np.eye(region.shape[0]) - np.diag(region))
    return MetricSampleSet((MetricSample(g1, np.zeros(region.shape[0])),), "ALIGN_REGION")


# -- evaluation-only metrics -----------------------------------------------

def sensitivity_distortions(base_map, perturbed_maps):
    """Squared L2 distortions ``||phi(x) - phi(x + eps_j)||^2``."""
    base = base_map.values if isinstance(base_map, AttributionMap) else np.asarray(base_map)
    out = []
    for pm in perturbed_maps:
        v = pm.values if isinstance(pm, AttributionMap) else np.asarray(pm)
        diff = base - v
        out.append(float(diff @ diff))
    return np.array(out)


def sens_max_eval(stack_fn, x, noise, m, rng, map_selector):
    """Largest squared distortion over ``m`` noise draws.

    ``map_selector`` turns an :class:`AttributionStack` into the map under test
    (a column, or a fixed-weight aggregate).
    """
    if m < 1:
        raise InvalidInput("SENS_MAX needs m >= 1")
    base = map_selector(stack_fn(x))
    _, stacks = perturbed_stacks(stack_fn, x, noise, m, rng)
    return float(sensitivity_distortions(base, [map_selector(s) for s in stacks]).max())


def _projected_scores(masks, attribution):
    phi = attribution.values if isinstance(attribution, AttributionMap) else np.asarray(attribution)
    return np.atleast_2d(masks) @ phi


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] < 3:
        raise InvalidInput("correlation needs at least 3 samples")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DegenerateCorrelation("one series has zero variance")
    da = a - a.mean()
    db = b - b.mean()
    return float(np.clip((da @ db) / np.sqrt((da @ da) * (db @ db)), -1.0, 1.0))


def fcor_eval(model, x, masks, baseline, attribution, drops=None):
    """Pearson correlation of ``I' phi`` with the prediction drops."""
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    if masks.shape[0] < 3:
        raise InvalidInput("FCOR needs m >= 3")
    if drops is None:
        drops = prediction_drops(model, x, masks, baseline)
    return pearson(_projected_scores(masks, attribution), drops)


def infd_normalized_eval(model, x, masks, baseline, attribution, drops=None):
    """Infidelity after optimally rescaling the map by ``beta`` (scale invariant)."""
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    if drops is None:
        drops = prediction_drops(model, x, masks, baseline)
    a = _projected_scores(masks, attribution)
    denom = float(a @ a)
    beta = float(a @ drops) / denom if denom > 1e-18 else 1.0
    r = beta * a - drops
    return float(r @ r) / masks.shape[0]


def randomization_metric(model, x, method, n_rand, rng, shape, layers=None):
    """``-(1/n) sum_j ||phi_theta(x) - phi_theta_j(x)||^2`` over randomized models.

    ``method`` is an :class:`AttributionMethodSpec` or a callable
    ``(model, x, shape) -> AttributionMap``.
    """
    if n_rand < 1:
        raise InvalidInput("randomization metric needs n_rand >= 1")
    if callable(method):
        explain = method
    else:
        def explain(mdl, xx, shp):
            return compute_attribution(method, mdl, xx, shp)
    layers = range(len(model.weights)) if layers is None else layers
    base = explain(model, x, shape).values
    total = 0.0
    for j in range(n_rand):
        seed = int(rng.next_u64(1)[0])
        other = explain(randomize_parameters(model, layers, seed), x, shape).values
        diff = base - other
        total += float(diff @ diff)
    return -total / n_rand


def complexity_metric(attribution, t):
    """Truncated squared L2 norm ``sum_i min(|phi_i|, t)^2``."""
    if not t > 0:
        raise InvalidInput("complexity threshold must be positive")
    phi = attribution.values if isinstance(attribution, AttributionMap) else np.asarray(attribution)
    return float(np.sum(np.minimum(np.abs(phi), t) ** 2))


def complexity_samples(attribution, t):
    """The same metric written as one ``(gamma1, gamma2)`` sample of the L2 class.

    Entries at or above ``t`` are dropped by ``gamma1`` and replaced by a
    constant ``-t`` in ``gamma2``; entries below ``t`` pass through.
    """
    if not t > 0:
        raise InvalidInput("complexity threshold must be positive")
    phi = attribution.values if isinstance(attribution, AttributionMap) else np.asarray(attribution)
    below = np.abs(phi) < t
    g1 = LinearQuery.diagonal(below.astype(np.float64))
    g2 = np.where(below, 0.0, -t)
    return MetricSampleSet((MetricSample(g1, g2),), "COMPLEXITY")


def complexity_metric_via_gamma(attribution, t):
    return estimate(complexity_samples(attribution, t), attribution)


def perturbed_stack_from_samples(samples, j, stack):
    """Rebuild the attribution stack at the ``j``-th perturbed input of a sensitivity set."""
    return AttributionStack(stack.shape, stack.method_names, samples.samples[j].gamma2)


def as_weights(omega):
    return omega if isinstance(omega, SimplexWeights) else SimplexWeights(omega)
