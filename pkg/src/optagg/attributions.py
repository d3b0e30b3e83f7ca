"""Gradient, perturbation and patch-LIME attribution methods.

All methods return an :class:`~optagg.core.AttributionMap`.  With
``normalize_output=True`` (the default) the raw scores go through
:func:`~optagg.core.normalize`.
"""
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .core import AttributionMap, AttributionStack, normalize
from .errors import InvalidInput, Unsupported
from .perturb import BaselineSpec, apply_h, make_baseline
from .rng import Rng

KINDS = ("saliency", "input_x_grad", "integrated_gradients", "smoothgrad",
         "vargrad", "occlusion", "lime_patch")
GRADIENT_KINDS = KINDS[:5]


@dataclass(frozen=True)
class AttributionMethodSpec:
    kind: str
    name: str = ""
    ig_steps: int = 64
    ig_baseline: str = "zeros"
    sg_samples: int = 25
    sg_sigma: float = 0.1
    occlusion_patch: tuple = (4, 4)
    occlusion_baseline: str = "zeros"
    lime_patch_size: tuple = (4, 4)
    lime_samples: int = 200
    lime_lambda: float = 0.0
    lime_baseline: str = "zeros"
    blur_sigma: float = 2.0
    seed: int = 0
    normalize_output: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown attribution kind {self.kind!r}")
        for field_name in ("ig_steps", "sg_samples", "lime_samples"):
            if getattr(self, field_name) < 1:
                raise InvalidInput(f"{field_name} must be positive")
        if self.sg_sigma < 0 or self.lime_lambda < 0:
            raise InvalidInput("sg_sigma and lime_lambda must be non-negative")
        for size in (self.occlusion_patch, self.lime_patch_size):
            if len(size) != 2 or min(size) < 1:
                raise InvalidInput("patch sizes must be two positive integers")
        object.__setattr__(self, "occlusion_patch", tuple(int(v) for v in self.occlusion_patch))
        object.__setattr__(self, "lime_patch_size", tuple(int(v) for v in self.lime_patch_size))
        if not self.name:
            object.__setattr__(self, "name", default_name(self))

    @property
    def gradient_based(self):
        return self.kind in GRADIENT_KINDS


def default_name(spec):
    if spec.kind == "occlusion":
        return "occlusion_{}x{}".format(*spec.occlusion_patch)
    if spec.kind == "lime_patch":
        return "lime_{}x{}_l{:g}".format(*spec.lime_patch_size, spec.lime_lambda)
    return spec.kind


class PatchGrid:
    """Tiling of the pixel grid into ``ph x pw`` patches, ragged at right/bottom."""

    def __init__(self, shape, patch_height, patch_width):
        if patch_height < 1 or patch_width < 1:
            raise InvalidInput("patch dimensions must be positive")
        self.shape = shape
        self.patch_height = patch_height
        self.patch_width = patch_width
        rows = -(-shape.height // patch_height)
        cols = -(-shape.width // patch_width)
        r = np.arange(shape.height) // patch_height
        c = np.arange(shape.width) // patch_width
        self.pixel_patch = (r[:, None] * cols + c[None, :]).ravel()
        self.n_patches = rows * cols
        self.feature_patch = np.repeat(self.pixel_patch, shape.channels)
        ind = np.zeros((self.n_patches, shape.d))
        ind[self.feature_patch, np.arange(shape.d)] = 1.0
        self.indicator = ind

    def spread(self, patch_values):
        """Write one value per patch onto every feature of that patch."""
        return np.asarray(patch_values, dtype=np.float64)[self.feature_patch]


def _finish(raw, shape, normalize_output):
    raw = np.asarray(raw, dtype=np.float64)
    if normalize_output:
        return normalize(raw, shape)
    return AttributionMap(shape, raw, normalized=False)


def _require_gradient(model):
    if not model.has_gradient:
        raise Unsupported(f"{model.name} has no gradient capability")


def _resolve_baseline(baseline, x, shape, blur_sigma=2.0):
    if isinstance(baseline, str):
        return make_baseline(BaselineSpec(baseline, blur_sigma), x, shape)
    if isinstance(baseline, BaselineSpec):
        return make_baseline(baseline, x, shape)
    xb = np.asarray(baseline, dtype=np.float64).ravel()
    if xb.shape[0] != shape.d:
        raise InvalidInput("baseline length does not match shape")
    return xb


def saliency(model, x, shape, normalize_output=True):
    _require_gradient(model)
    return _finish(np.abs(model.gradient(x)), shape, normalize_output)


def input_x_grad(model, x, shape, normalize_output=True):
    _require_gradient(model)
    x = np.asarray(x, dtype=np.float64)
    return _finish(np.abs(x * model.gradient(x)), shape, normalize_output)


def integrated_gradients_signed(model, x, baseline, steps=64):
    """Signed midpoint-rule path integral ``(x - x0) * mean_s grad(x0 + a_s (x - x0))``."""
    _require_gradient(model)
    if steps < 1:
        raise InvalidInput("integrated gradients needs steps >= 1")
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(baseline, dtype=np.float64)
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    path = x0[None, :] + alphas[:, None] * (x - x0)[None, :]
    return (x - x0) * _stable_mean(model.gradient_batch(path))


def integrated_gradients(model, x, shape, baseline="zeros", steps=64,
                         normalize_output=True, blur_sigma=2.0):
    x0 = _resolve_baseline(baseline, x, shape, blur_sigma)
    raw = integrated_gradients_signed(model, x, x0, steps)
    return _finish(np.abs(raw), shape, normalize_output)


def _stable_mean(g):
    # centring on the first row makes the mean of identical rows exact
    return g[0] + (g - g[0]).mean(axis=0)


def _noisy_gradients(model, x, n, sigma, seed):
    x = np.asarray(x, dtype=np.float64)
    noise = Rng(seed).normal(n * x.shape[0], scale=sigma).reshape(n, x.shape[0])
    return model.gradient_batch(x[None, :] + noise)


def smoothgrad(model, x, shape, n=25, sigma=0.1, seed=0, normalize_output=True):
    """Absolute value of the mean gradient over Gaussian-perturbed copies of ``x``."""
    _require_gradient(model)
    if n < 1:
        raise InvalidInput("smoothgrad needs n >= 1")
    if sigma < 0:
        raise InvalidInput("smoothgrad needs sigma >= 0")
    if sigma == 0:
        mean = model.gradient(x)
    else:
        mean = _stable_mean(_noisy_gradients(model, x, n, sigma, seed))
    return _finish(np.abs(mean), shape, normalize_output)


def vargrad(model, x, shape, n=25, sigma=0.1, seed=0, normalize_output=True):
    """Feature-wise population variance of gradients under Gaussian input noise."""
    _require_gradient(model)
    if n < 2:
        raise InvalidInput("vargrad needs n >= 2")
    if sigma < 0:
        raise InvalidInput("vargrad needs sigma >= 0")
    if sigma == 0:
        return _finish(np.zeros(shape.d), shape, normalize_output)
    g = _noisy_gradients(model, x, n, sigma, seed)
    # shift by the first sample so identical gradients give exactly zero
    dev = g - g[0]
    dev -= dev.mean(axis=0)
    return _finish((dev * dev).mean(axis=0), shape, normalize_output)


def occlusion_drops(model, x, grid, baseline):
    """Prediction drop ``f(x) - f(h(x, x_b, I_p))`` for every patch ``p``."""
    x = np.asarray(x, dtype=np.float64)
    xb = _resolve_baseline(baseline, x, grid.shape)
    occluded = apply_h(x, xb, grid.indicator)
    scores = model.predict_batch(np.vstack([x[None, :], occluded]))
    return scores[0] - scores[1:]


def occlusion(model, x, grid, baseline="zeros", normalize_output=True):
    drops = occlusion_drops(model, x, grid, baseline)
    return _finish(grid.spread(np.abs(drops)), grid.shape, normalize_output)


LIME_KERNEL_WIDTH = 0.25
LIME_TOL = 1e-8
LIME_MAX_SWEEPS = 10_000


@njit(cache=True)
def _soft_threshold(v, t):
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


@njit(cache=True)
def _weighted_lasso_cd(G, c, penalty, tol, max_sweeps):
    # Covariance-form cyclic coordinate descent.  Coordinate 0 is the
    # unpenalized intercept.  G = A' W A and c = A' W y for A = [1, Z].
    p = G.shape[0]
    beta = np.zeros(p)
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        max_change = 0.0
        for j in range(p):
            if G[j, j] <= 0.0:
                continue
            rho = c[j]
            for l in range(p):
                if l != j:
                    rho -= G[j, l] * beta[l]
            if j == 0:
                new = rho / G[j, j]
            else:
                new = _soft_threshold(rho, penalty) / G[j, j]
            change = abs(new - beta[j])
            if change > max_change:
                max_change = change
            beta[j] = new
        if max_change <= tol:
            break
    return beta, sweeps


def weighted_lasso(Z, y, weights, lam, tol=LIME_TOL, max_sweeps=LIME_MAX_SWEEPS):
    """Minimize ``sum w (y - b0 - Z b)^2 + lam * n * sum |b|`` by coordinate descent.

    Returns ``(intercept, coefficients, sweeps)``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n = Z.shape[0]
    A = np.hstack([np.ones((n, 1)), Z])
    Aw = A * w[:, None]
    G = A.T @ Aw
    c = Aw.T @ y
    beta, sweeps = _weighted_lasso_cd(G, c, 0.5 * lam * n, tol, max_sweeps)
    return beta[0], beta[1:], sweeps


def lime_design(grid, n_samples, seed):
    """Bernoulli(0.5) keep-masks and their proximity-kernel weights."""
    z = (Rng(seed).random(n_samples * grid.n_patches) < 0.5).astype(np.float64)
    z = z.reshape(n_samples, grid.n_patches)
    removed = 1.0 - z.mean(axis=1)
    return z, np.exp(-(removed**2) / LIME_KERNEL_WIDTH)


def lime_coefficients(model, x, grid, n_samples=200, lam=0.0, baseline="zeros", seed=0):
    """Fit the patch surrogate; returns ``(intercept, per-patch coefficients)``."""
    if n_samples < grid.n_patches + 1:
        raise InvalidInput(f"LIME needs at least {grid.n_patches + 1} samples for "
                           f"{grid.n_patches} patches, got {n_samples}")
    if lam < 0:
        raise InvalidInput("LIME lambda must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    xb = _resolve_baseline(baseline, x, grid.shape)
    z, pi = lime_design(grid, n_samples, seed)
    removed_features = (1.0 - z) @ grid.indicator
    y = model.predict_batch(apply_h(x, xb, removed_features))
    b0, beta, _ = weighted_lasso(z, y, pi, lam)
    return b0, beta


def lime_patch(model, x, grid, n_samples=200, lam=0.0, baseline="zeros", seed=0,
               normalize_output=True):
    _, beta = lime_coefficients(model, x, grid, n_samples, lam, baseline, seed)
    return _finish(grid.spread(np.abs(beta)), grid.shape, normalize_output)


def compute_attribution(spec, model, x, shape):
    """Evaluate one roster entry at ``x``."""
    norm = spec.normalize_output
    if spec.kind == "saliency":
        return saliency(model, x, shape, norm)
    if spec.kind == "input_x_grad":
        return input_x_grad(model, x, shape, norm)
    if spec.kind == "integrated_gradients":
        return integrated_gradients(model, x, shape, spec.ig_baseline, spec.ig_steps, norm,
                                    spec.blur_sigma)
    if spec.kind == "smoothgrad":
        return smoothgrad(model, x, shape, spec.sg_samples, spec.sg_sigma, spec.seed, norm)
    if spec.kind == "vargrad":
        return vargrad(model, x, shape, spec.sg_samples, spec.sg_sigma, spec.seed, norm)
    base = BaselineSpec(spec.occlusion_baseline if spec.kind == "occlusion" else spec.lime_baseline,
                        spec.blur_sigma)
    if spec.kind == "occlusion":
        return occlusion(model, x, PatchGrid(shape, *spec.occlusion_patch), base, norm)
    return lime_patch(model, x, PatchGrid(shape, *spec.lime_patch_size), spec.lime_samples,
                      spec.lime_lambda, base, spec.seed, norm)


class StackFunction:
    """``x -> AttributionStack`` for a fixed model and method roster."""

    def __init__(self, model, roster, shape):
        roster = list(roster)
        if not roster:
            raise InvalidInput("method roster must not be empty")
        self.model = model
        self.roster = roster
        self.shape = shape
        self.names = tuple(spec.name for spec in roster)

    def __call__(self, x):
        maps = [compute_attribution(spec, self.model, x, self.shape) for spec in self.roster]
        return AttributionStack.from_maps(self.names, maps)

    def subset(self, indices):
        return StackFunction(self.model, [self.roster[i] for i in indices], self.shape)


def with_seed(spec, seed):
    return replace(spec, seed=seed)
