"""Which LIME sparsity level does AGG_opt favour for small and large objects?"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..aggregation import StrategySpec, aggregate
from ..attributions import AttributionMethodSpec, StackFunction
from ..metrics import build_infidelity_samples, build_sensitivity_samples
from ..perturb import make_baseline, sample_masks
from ..rng import Rng
from .datasets import gen_blob_dataset
from .formats import csv_text

GROUPS = ("small", "large")
Z95 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class LimeReport:
    variants: tuple
    lambdas: tuple        # lambda of each variant
    weights: dict         # group -> (n, k) AGG_opt weights

    def group_weight(self, group, lam):
        """Per-image total weight on the variants with sparsity ``lam``."""
        cols = [i for i, l in enumerate(self.lambdas) if l == lam]
        return self.weights[group][:, cols].sum(axis=1)

    def summary(self, group, lam):
        w = self.group_weight(group, lam)
        mean = float(w.mean())
        half = Z95 * float(w.std(ddof=1)) / np.sqrt(w.size) if w.size > 1 else 0.0
        return mean, mean - half, mean + half

    def summary_rows(self):
        rows = []
        for group in GROUPS:
            for lam in sorted(set(self.lambdas)):
                rows.append([group, lam, *self.summary(group, lam), self.weights[group].shape[0]])
        return rows

    def summary_csv(self):
        return csv_text(("group", "lambda", "mean_weight", "ci_low", "ci_high", "n"),
                        self.summary_rows())

    def weights_csv(self):
        rows = [[g, i, *w] for g in GROUPS for i, w in enumerate(self.weights[g])]
        return csv_text(("group", "image", *self.variants), rows)

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "lime_summary.csv").write_bytes(self.summary_csv().encode("utf-8"))
        (directory / "lime_weights.csv").write_bytes(self.weights_csv().encode("utf-8"))
        return directory


def lime_roster(config):
    return [AttributionMethodSpec("lime_patch", lime_patch_size=tuple(p), lime_lambda=lam,
                                  lime_samples=config.lime_samples,
                                  lime_baseline=config.perturbation.baseline,
                                  blur_sigma=config.perturbation.blur_sigma)
            for p in config.patch_sizes for lam in config.lambdas]


def run_lime_sparsity_experiment(config, seed=0, out=None):
    """AGG_opt (infidelity + sensitivity) weights over the LIME variants, per image group."""
    shape = config.shape
    model = config.model.build(shape)
    roster = lime_roster(config)
    stack_fn = StackFunction(model, roster, shape)
    pert = config.perturbation
    root = Rng(seed)
    weights = {}
    try:
        for g, (group, frac) in enumerate(zip(GROUPS, (config.small_fraction,
                                                        config.large_fraction))):
            images, _ = gen_blob_dataset(config.n_per_group, shape, frac, config.noise_level,
                                         root.child(0, g))
            rows = []
            for i, x in enumerate(images):
                base = stack_fn(x)
                xb = make_baseline(pert.baseline_spec, x, shape)
                sens = build_sensitivity_samples(stack_fn, x, pert.noise, config.m_agg,
                                                 root.child(1, g, i, 0))
                masks = sample_masks(pert.masks, shape, root.child(1, g, i, 1), config.m_agg)
                infd = build_infidelity_samples(model, x, masks, xb)
                rows.append(aggregate(base, StrategySpec("opt"), sens=sens, infd=infd)
                            .weights.omega)
            weights[group] = np.array(rows)
    finally:
        close = getattr(model, "close", None)
        if close:
            close()
    report = LimeReport(tuple(s.name for s in roster), tuple(s.lime_lambda for s in roster),
                        weights)
    if out:
        report.write(out)
    return report
