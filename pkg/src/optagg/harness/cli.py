"""``optagg`` command line.

Exit codes: 0 ok, 1 invariant failure, 2 configuration or input error,
3 model unavailable.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..aggregation import aggregate
from ..attributions import StackFunction
from ..core import AttributionStack
from ..errors import (ConfigError, FormatError, InvalidInput, ModelUnavailable, ProtocolError,
                      DegenerateCorrelation)
from ..metrics import (build_infidelity_samples, estimate, fcor_eval, infd_normalized_eval,
                       perturbed_stacks, sensitivity_samples_from_stacks)
from ..perturb import make_baseline, sample_masks
from ..qp import SolverConfig
from ..rng import Rng
from . import bench
from .config import load_config, override
from .datasets import gen_blob_dataset
from .formats import export_heatmap, load_stack, save_stack, write_csv, write_json
from .lime_experiment import run_lime_sparsity_experiment
from .verify import verify

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_MODEL = 0, 1, 2, 3
DEFAULT_OUT = "optagg_out"


def _image_dir(root, index):
    return Path(root) / f"img_{index:04d}"


def _image_index(path):
    try:
        return int(Path(path).name.split("_")[1])
    except (IndexError, ValueError):
        raise ConfigError(f"{path}: expected a directory named img_NNNN") from None


def _stack_dirs(root):
    dirs = sorted(p for p in Path(root).glob("img_*") if p.is_dir())
    if not dirs:
        raise ConfigError(f"no img_NNNN stack directories under {root}")
    return dirs


def _dataset(config):
    book = bench.StreamBook(Rng(config.seed))
    images, masks = gen_blob_dataset(config.dataset.n, config.dataset.shape,
                                     config.dataset.fraction_range, config.dataset.noise_level,
                                     book.claim("data", bench.DATASET_STREAM))
    return images


def _image(images, index):
    if not 0 <= index < len(images):
        raise ConfigError(f"image index {index} is outside the configured dataset")
    return images[index]


def cmd_attrib(config, out, args):
    shape = config.dataset.shape
    model = config.model.build(shape)
    try:
        stack_fn = StackFunction(model, config.roster(), shape)
        for i, x in enumerate(_dataset(config)):
            stack = stack_fn(x)
            save_stack(stack, _image_dir(out / "stacks", i))
            if config.heatmaps:
                for j, name in enumerate(stack.method_names):
                    export_heatmap(stack.column(j), out / "heatmaps" / f"img_{i:04d}_{name}.pgm")
    finally:
        getattr(model, "close", lambda: None)()
    print(f"wrote {config.dataset.n} stacks to {out / 'stacks'}")
    return EXIT_OK


def cmd_aggregate(config, out, args):
    shape = config.dataset.shape
    images = _dataset(config)
    pert = config.perturbation
    root = Rng(config.seed)
    model = config.model.build(shape)
    status = EXIT_OK
    weights = {}
    try:
        stack_fn = StackFunction(model, config.roster(), shape)
        for d in _stack_dirs(args.stacks or out / "stacks"):
            i = _image_index(d)
            stack = load_stack(d)
            if stack.method_names != stack_fn.names or stack.shape != shape:
                raise ConfigError(f"{d}: methods or shape differ from the configured roster")
            x = _image(images, i)
            # same streams as the bench, so weights agree with a bench run
            inputs, stacks = perturbed_stacks(stack_fn, x, pert.noise, config.m_agg,
                                              root.child(bench.IMAGE_STREAM, i, bench.AGG_SENS))
            sens = sensitivity_samples_from_stacks(stacks, inputs)
            masks = sample_masks(pert.masks, shape,
                                 root.child(bench.IMAGE_STREAM, i, bench.AGG_INFD), config.m_agg)
            infd = build_infidelity_samples(model, x, masks,
                                            make_baseline(pert.baseline_spec, x, shape))
            sets = {"sens": sens, "infd": infd}
            labels, maps, record = [], [], {}
            for s in config.strategies:
                res = aggregate(stack, s.spec(sets), sens=sens, infd=infd)
                labels.append(s.label)
                maps.append(res.map.values)
                if res.strategy.kind != "var":
                    record[s.label] = res.weights.omega
                if res.Q is not None:
                    w = res.weights.omega
                    if w @ res.Q @ w > np.min(np.diag(res.Q)) + 1e-9:
                        status = EXIT_INVARIANT
            weights[d.name] = record
            save_stack(AttributionStack(shape, tuple(labels), np.column_stack(maps)),
                       _image_dir(out / "aggregates", i))
    finally:
        getattr(model, "close", lambda: None)()
    write_json(out / "weights.json", weights)
    print(f"wrote {len(weights)} aggregate stacks to {out / 'aggregates'}")
    return status


def cmd_evaluate(config, out, args):
    shape = config.dataset.shape
    images = _dataset(config)
    pert = config.perturbation
    root = Rng(config.seed)
    model = config.model.build(shape)
    rows = []
    try:
        for d in _stack_dirs(args.stacks or out / "aggregates"):
            i = _image_index(d)
            stack = load_stack(d)
            x = _image(images, i)
            xb = make_baseline(pert.baseline_spec, x, shape)
            masks = sample_masks(pert.masks, shape,
                                 root.child(bench.IMAGE_STREAM, i, bench.EVAL_INFD), config.m_eval)
            ev = build_infidelity_samples(model, x, masks, xb)
            drops = ev.extras["drops"]
            for j, name in enumerate(stack.method_names):
                phi = stack.matrix[:, j]
                try:
                    fcor = fcor_eval(model, x, masks, xb, phi, drops)
                except (DegenerateCorrelation, InvalidInput):
                    fcor = None
                rows.append([i, name, None, None, estimate(ev, phi),
                             infd_normalized_eval(model, x, masks, xb, phi, drops), fcor])
    finally:
        getattr(model, "close", lambda: None)()
    write_csv(out / "evaluation.csv", ("image", "row", *bench.COLUMNS), rows)
    print(f"wrote {out / 'evaluation.csv'}")
    return EXIT_OK


def cmd_bench(config, out, args):
    table = bench.run_bench(config, out)
    print(table.summary_csv(), end="")
    dominance = all(v["vertex_dominance"] for rec in table.images
                    for v in rec["in_sample"].values())
    return EXIT_OK if dominance else EXIT_INVARIANT


def cmd_lime(config, out, args):
    report = run_lime_sparsity_experiment(config.lime_experiment, config.seed, out)
    print(report.summary_csv(), end="")
    return EXIT_OK


def cmd_verify(config, out, args):
    solver = SolverConfig(step_scale=args.step_scale) if args.step_scale else None
    suites = tuple(args.suites.split(",")) if args.suites else None
    report = verify(config.verify, config.seed, solver, suites)
    write_json(out / "verify.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if report["passed"] else EXIT_INVARIANT


COMMANDS = {"attrib": cmd_attrib, "aggregate": cmd_aggregate, "evaluate": cmd_evaluate,
            "bench": cmd_bench, "lime-exp": cmd_lime, "verify": cmd_verify}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                        help="JSON config file (unknown keys are rejected)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed (u64)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads, 0 = one per CPU")
    parser = argparse.ArgumentParser(prog="optagg", parents=[common],
                                     description="Optimal aggregation of feature attributions")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("attrib", parents=[common], help="compute attribution stacks")
    for name, default in (("aggregate", "stacks"), ("evaluate", "aggregates")):
        p = sub.add_parser(name, parents=[common],
                           help=f"{name} stack files (default OUT/{default})")
        p.add_argument("--stacks", type=Path, default=None)
    sub.add_parser("bench", parents=[common], help="full optimise-then-evaluate bench")
    sub.add_parser("lime-exp", parents=[common], help="LIME sparsity experiment")
    p = sub.add_parser("verify", parents=[common], help="run the invariant suites")
    p.add_argument("--suites", default=None, help="comma-separated subset of suites")
    p.add_argument("--step-scale", type=float, default=None,
                   help="multiply the solver step (fault injection)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(getattr(args, "config", None))
        seed = getattr(args, "seed", None)
        if seed is not None and not 0 <= seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        config = override(config, seed=seed, threads=getattr(args, "threads", None))
        out = Path(getattr(args, "out", None) or config.output_dir or DEFAULT_OUT)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](config, out, args)
    except (ConfigError, InvalidInput, FormatError) as exc:
        print(f"optagg: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelUnavailable, ProtocolError) as exc:
        print(f"optagg: model unavailable: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
