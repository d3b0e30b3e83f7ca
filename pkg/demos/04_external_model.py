"""
Explaining a model that lives in another process
================================================

Any executable that speaks the line-delimited JSON protocol can be scored.
The package ships a tiny sum model server (``python -m optagg.msp``); here
it stands in for a real network.  Perturbation methods need only
predictions, gradient methods use the server's gradient capability.
"""
import sys

import numpy as np

from optagg import Rng, Shape
from optagg.aggregation import aggregate
from optagg.attributions import AttributionMethodSpec, StackFunction
from optagg.metrics import build_infidelity_samples, build_sensitivity_samples
from optagg.msp import external_model_connect
from optagg.perturb import NoiseSpec, RegionMaskSpec, sample_masks

shape = Shape(8, 8)
x = Rng(0).random(shape.d)
with external_model_connect([sys.executable, "-m", "optagg.msp", "--dim", str(shape.d)]) as model:
    print("connected to", model.name, "d =", model.input_dim, "gradient:", model.has_gradient)
    roster = [AttributionMethodSpec("input_x_grad", normalize_output=False),
              AttributionMethodSpec("occlusion", occlusion_patch=(2, 2), normalize_output=False),
              AttributionMethodSpec("lime_patch", lime_patch_size=(2, 2), normalize_output=False)]
    stack_fn = StackFunction(model, roster, shape)
    stack = stack_fn(x)
    sens = build_sensitivity_samples(stack_fn, x, NoiseSpec(0.05), 10, Rng(1))
    masks = sample_masks(RegionMaskSpec("scattered", 0.2), shape, Rng(2), 40)
    infd = build_infidelity_samples(model, x, masks, np.zeros(shape.d))
    res = aggregate(stack, "faith", sens=sens, infd=infd)
    print("faithfulness weights", dict(zip(stack.method_names, res.weights.omega.round(3).tolist())))
    print("in-sample infidelity", res.solution.objective)
    print("requests sent", len(model.request_log))
