"""
Aggregating six attribution methods on one image
================================================

Fit simplex weights for robustness and faithfulness on a small sample budget,
then score every map on a fresh, larger sample.
"""
import numpy as np

from optagg import Rng, Shape
from optagg.aggregation import aggregate, var_map
from optagg.attributions import AttributionMethodSpec, StackFunction
from optagg.harness.datasets import gen_blob_dataset
from optagg.metrics import (build_infidelity_samples, build_sensitivity_samples, estimate,
                            perturbed_stacks, sensitivity_distortions)
from optagg.models import ToyMlp
from optagg.perturb import BaselineSpec, NoiseSpec, RegionMaskSpec, make_baseline, sample_masks

shape = Shape(16, 16)
model = ToyMlp.contrast_detector(shape.d)
images, regions = gen_blob_dataset(1, shape, (0.2, 0.2), 0.05, Rng(0))
x = images[0]
print("model score", round(model.predict(x), 3), "| object pixels", regions[0].sum())

roster = [AttributionMethodSpec(k) for k in
          ("saliency", "input_x_grad", "integrated_gradients", "smoothgrad", "vargrad", "occlusion")]
stack_fn = StackFunction(model, roster, shape)
stack = stack_fn(x)
print("methods", stack.method_names)

# fitting budget: 50 noise draws and 50 square masks against a blurred baseline
noise = NoiseSpec(0.1)
masks_spec = RegionMaskSpec("square", 0.2)
baseline = make_baseline(BaselineSpec("blur"), x, shape)
sens = build_sensitivity_samples(stack_fn, x, noise, 50, Rng(1))
infd = build_infidelity_samples(model, x, sample_masks(masks_spec, shape, Rng(2), 50), baseline)

results = {kind: aggregate(stack, kind, sens=sens, infd=infd)
           for kind in ("mean", "var", "robust", "faith", "opt")}
np.set_printoptions(precision=3, suppress=True)
for kind in ("robust", "faith", "opt"):
    print(f"AGG_{kind:<6} weights", results[kind].weights.omega)

# fresh evaluation sample, four times larger
_, eval_stacks = perturbed_stacks(stack_fn, x, noise, 200, Rng(3))
eval_infd = build_infidelity_samples(model, x, sample_masks(masks_spec, shape, Rng(4), 200), baseline)


# each row is a rule "stack -> map"; fixed weights travel to perturbed inputs unchanged,
# while AGG_var is recomputed from the perturbed stack
rows = {name: (lambda st, i=i: st.matrix[:, i]) for i, name in enumerate(stack.method_names)}
rows["AGG_mean"] = lambda st: st.matrix.mean(axis=1)
rows["AGG_var"] = lambda st: var_map(st).values
for kind in ("robust", "faith", "opt"):
    rows["AGG_" + kind] = lambda st, w=results[kind].weights.omega: st.matrix @ w

print(f"\n{'row':<22}{'S_AVG':>10}{'INFD':>12}")
for name, rule in rows.items():
    phi = rule(stack)
    s_avg = sensitivity_distortions(phi, [rule(st) for st in eval_stacks]).mean()
    print(f"{name:<22}{s_avg:>10.4f}{estimate(eval_infd, phi):>12.1f}")
