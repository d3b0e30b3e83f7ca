"""Invariant suite with a machine-readable report.

Each check records its measured residual and tolerance.  The report is a
plain dict so it round trips through JSON unchanged.
"""
import json

import numpy as np

from ..aggregation import regret_study, spread_decomposition
from ..attributions import AttributionMethodSpec, StackFunction
from ..core import AttributionStack, Shape
from ..metrics import LinearQuery, MetricSample, MetricSampleSet, gamma_matrices, gram
from ..models import ToyMlp
from ..perturb import NoiseSpec
from ..qp import grid_oracle, solve
from ..rng import Rng
from .datasets import gen_blob_dataset

SCHEMA = "optagg.verify/1"


def random_psd(rng, k):
    """``A'A`` with ``A`` of shape ``(k, k)`` and N(0, 1/k) entries."""
    A = rng.normal(k * k, 1.0 / np.sqrt(k)).reshape(k, k)
    return A.T @ A


def random_simplex_point(rng, k):
    w = -np.log1p(-rng.random(k))
    return w / w.sum()


def random_stack(rng, k, shape):
    return AttributionStack(shape, tuple(f"m{i}" for i in range(k)),
                            rng.random(shape.d * k).reshape(shape.d, k))


def random_sample_set(rng, k, d, m, per_method):
    """Sensitivity-like (per-method ``gamma2``) or infidelity-like (row masks) samples."""
    out = []
    for _ in range(m):
        if per_method:
            out.append(MetricSample(LinearQuery.identity(), rng.random(d * k).reshape(d, k),
                                    per_method=True))
        else:
            mask = (rng.random(d) < 0.3).astype(np.float64)
            out.append(MetricSample(LinearQuery.rowmask(mask), rng.normal(1, 2.0)))
    return MetricSampleSet(tuple(out))


def _check(name, measured, tolerance, passed=None, **details):
    ok = bool(measured <= tolerance) if passed is None else bool(passed)
    return {"name": name, "passed": ok, "measured": float(measured),
            "tolerance": float(tolerance), **details}


def check_identity(rng, cases):
    shape = Shape(4, 4)
    worst_rel, worst_amb = 0.0, np.inf
    for c in range(cases):
        r = rng.child(c)
        k = 2 + c % 6
        m = (10, 50)[(c // 6) % 2]
        stack = random_stack(r.child(0), k, shape)
        samples = random_sample_set(r.child(1), k, shape.d, m, per_method=bool(c % 2))
        rep = spread_decomposition(stack, random_simplex_point(r.child(2), k), samples)
        worst_rel = max(worst_rel, rep.residual / max(1.0, rep.weighted_sum))
        worst_amb = min(worst_amb, rep.ambiguity)
    return [_check("identity_residual", worst_rel, 1e-8, cases=cases),
            _check("ambiguity_nonnegative", worst_amb, -1e-12, passed=worst_amb >= -1e-12)]


def check_qp(rng, cases, solver_config=None):
    worst_gap, worst_kkt = 0.0, 0.0
    for c in range(cases):
        k = 2 + c % 3
        Q = random_psd(rng.child(c), k)
        sol = solve(Q, solver_config)
        _, grid_val = grid_oracle(Q, 1e-3)
        worst_gap = max(worst_gap, abs(sol.objective - grid_val))
        worst_kkt = max(worst_kkt, sol.kkt_residual)
    analytic = 0.0
    for Q, expect in ((np.eye(2), [0.5, 0.5]), (np.diag([1.0, 4.0]), [0.8, 0.2])):
        w = solve(Q, solver_config).omega.omega
        analytic = max(analytic, float(np.max(np.abs(w - expect))))
    return [_check("qp_grid_gap", worst_gap, 5e-6, cases=cases),
            _check("qp_kkt", worst_kkt, 1e-6, cases=cases),
            _check("qp_analytic", analytic, 1e-9)]


def check_gradients(rng, cases):
    worst = 0.0
    d = 16
    models = [ToyMlp.random([d, 8, 4, 1], 11, "tanh"), ToyMlp.contrast_detector(d, 4, gain=3.0)]
    h = 1e-5
    for c in range(cases):
        model = models[c % 2]
        x = rng.child(c).uniform(-1.0, 1.0, d)
        g = model.gradient(x)
        E = np.eye(d) * h
        fd = (model.predict_batch(x + E) - model.predict_batch(x - E)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)))
    return [_check("gradient_fd", worst, 1e-5, cases=cases)]


def check_gram(rng, cases):
    shape = Shape(4, 4)
    worst = 0.0
    for c in range(cases):
        r = rng.child(c)
        k = 2 + c % 6
        stack = random_stack(r.child(0), k, shape)
        samples = random_sample_set(r.child(1), k, shape.d, 10 + c % 20, per_method=bool(c % 2))
        w = random_simplex_point(r.child(2), k)
        quad = float(w @ gram(samples, stack).Q @ w)
        direct = float(np.mean([np.sum((G @ w) ** 2) for G in gamma_matrices(samples, stack)]))
        worst = max(worst, abs(quad - direct) / max(1.0, abs(direct)))
    return [_check("gram_identity", worst, 1e-10, cases=cases)]


def regret_setup(seed=0):
    """Small sensitivity instance used by the regret study."""
    shape = Shape(16, 16)
    model = ToyMlp.contrast_detector(shape.d)
    roster = [AttributionMethodSpec(k) for k in ("saliency", "input_x_grad", "smoothgrad",
                                                 "vargrad", "occlusion")]
    images, _ = gen_blob_dataset(1, shape, (0.2, 0.2), 0.05, Rng(seed).child(0))
    return StackFunction(model, roster, shape), images[0]


def regret_trend_ok(report):
    med = report.median_regret
    return (report.inversions() <= 1 and med[-1] <= 0.25 * med[0] + 1e-15
            and float(report.regrets.min()) >= -1e-9)


def check_regret(rng, config, solver_config=None):
    stack_fn, x = regret_setup()
    rep = regret_study(stack_fn, x, "sens", config.regret_m_grid, config.regret_trials,
                       config.regret_pool, rng, noise=NoiseSpec(0.1),
                       solver_config=solver_config)
    med = rep.median_regret
    ratio = float(med[-1] / med[0]) if med[0] > 0 else 0.0
    return [_check("regret_trend", ratio, 0.25, passed=regret_trend_ok(rep),
                   median_regret=med.tolist(), inversions=rep.inversions(),
                   min_regret=float(rep.regrets.min()))]


def verify(config, seed=0, solver_config=None, suites=None):
    """Run the invariant suites; ``solver_config`` lets callers inject a faulty solver."""
    root = Rng(seed)
    suites = suites or ("identity", "qp", "gradients", "gram", "regret")
    checks = []
    if "identity" in suites:
        checks += check_identity(root.child(0), config.identity_cases)
    if "qp" in suites:
        checks += check_qp(root.child(1), config.qp_cases, solver_config)
    if "gradients" in suites:
        checks += check_gradients(root.child(2), config.gradient_cases)
    if "gram" in suites:
        checks += check_gram(root.child(3), config.gram_cases)
    if "regret" in suites:
        checks += check_regret(root.child(4), config, solver_config)
    return {"schema": SCHEMA, "seed": seed, "passed": all(c["passed"] for c in checks),
            "checks": checks}


def parse_report(text):
    """Inverse of ``json.dumps(report)``; validates the schema tag and fields."""
    report = json.loads(text)
    if report.get("schema") != SCHEMA:
        raise ValueError("not a verify report")
    for c in report["checks"]:
        missing = {"name", "passed", "measured", "tolerance"} - c.keys()
        if missing:
            raise ValueError(f"check is missing {sorted(missing)}")
    return report
