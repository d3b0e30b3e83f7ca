"""End-to-end bench: fit aggregation weights on ``m_agg`` samples, score every
method and strategy on ``m_eval`` fresh samples, write tables and artifacts."""
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..aggregation import aggregate, var_map
from ..attributions import StackFunction
from ..errors import DegenerateCorrelation, InvalidInput, ModelUnavailable
from ..metrics import (build_infidelity_samples, estimate, fcor_eval, infd_normalized_eval,
                       perturbed_stacks, sensitivity_distortions, sensitivity_samples_from_stacks)
from ..perturb import make_baseline, sample_masks
from ..rng import Rng
from .datasets import gen_blob_dataset
from .formats import csv_text, export_heatmap, json_text

COLUMNS = ("S_AVG", "S_MAX", "INFD", "INFD_normalized", "FCOR")

# child-stream indices under each image's stream
AGG_SENS, AGG_INFD, EVAL_SENS, EVAL_INFD = 0, 1, 2, 3
DATASET_STREAM, IMAGE_STREAM = 0, 1


class StreamBook:
    """Hands out child streams and refuses to hand out the same path twice."""

    def __init__(self, root):
        self.root = root
        self.claimed = {}
        self._lock = threading.Lock()

    def claim(self, purpose, *path):
        with self._lock:
            if path in self.claimed:
                raise InvalidInput(f"stream {path} already used for {self.claimed[path]}")
            self.claimed[path] = purpose
        return self.root.child(*path)

    def paths(self, purpose):
        return {p for p, used_for in self.claimed.items() if used_for == purpose}


@dataclass(eq=False)
class ResultsTable:
    rows: list
    values: np.ndarray  # (images, rows, columns); NaN marks a missing cell
    images: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    partial: bool = False

    columns = COLUMNS

    def means(self):
        with np.errstate(invalid="ignore"):
            out = np.full(self.values.shape[1:], np.nan)
            for r in range(out.shape[0]):
                for c in range(out.shape[1]):
                    col = self.values[:, r, c]
                    col = col[np.isfinite(col)]
                    if col.size:
                        out[r, c] = col.mean()
        return out

    def column(self, name):
        return self.values[:, :, COLUMNS.index(name)]

    def row_index(self, name):
        return self.rows.index(name)

    def per_image_csv(self):
        body = []
        for i, image in enumerate(self.images):
            for r, name in enumerate(self.rows):
                body.append([image["index"], name, *self.values[i, r]])
        return csv_text(("image", "row", *COLUMNS), body)

    def summary_csv(self):
        m = self.means()
        return csv_text(("row", *COLUMNS), [[name, *m[r]] for r, name in enumerate(self.rows)])

    def to_json(self):
        m = self.means()
        return json_text({
            **self.meta,
            "partial": self.partial,
            "columns": list(COLUMNS),
            "rows": list(self.rows),
            "summary": {name: dict(zip(COLUMNS, m[r])) for r, name in enumerate(self.rows)},
            "images": self.images,
        })

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "results.csv").write_bytes(self.per_image_csv().encode("utf-8"))
        (directory / "summary.csv").write_bytes(self.summary_csv().encode("utf-8"))
        (directory / "results.json").write_bytes(self.to_json().encode("utf-8"))
        return directory


def _row_functions(names, results):
    """Map each row to ``stack -> map values``; weights stay fixed for convex rows."""
    fns = [(lambda st, j=j: st.matrix[:, j]) for j in range(len(names))]
    for res in results:
        if res.strategy.kind == "var":
            fns.append(lambda st, eps=res.strategy.var_epsilon: var_map(st, eps).values)
        else:
            fns.append(lambda st, w=res.weights.omega: st.matrix @ w)
    return fns


def _process_image(index, x, model, stack_fn, config, book):
    pert = config.perturbation
    shape = stack_fn.shape
    xb = make_baseline(pert.baseline_spec, x, shape)
    base = stack_fn(x)

    agg_inputs, agg_stacks = perturbed_stacks(
        stack_fn, x, pert.noise, config.m_agg, book.claim("agg", IMAGE_STREAM, index, AGG_SENS))
    sens = sensitivity_samples_from_stacks(agg_stacks, agg_inputs)
    infd = build_infidelity_samples(
        model, x, sample_masks(pert.masks, shape,
                               book.claim("agg", IMAGE_STREAM, index, AGG_INFD), config.m_agg), xb)
    sets = {"sens": sens, "infd": infd}
    results = [aggregate(base, s.spec(sets), sens=sens, infd=infd) for s in config.strategies]

    _, eval_stacks = perturbed_stacks(
        stack_fn, x, pert.noise, config.m_eval, book.claim("eval", IMAGE_STREAM, index, EVAL_SENS))
    eval_masks = sample_masks(pert.masks, shape,
                              book.claim("eval", IMAGE_STREAM, index, EVAL_INFD), config.m_eval)
    eval_infd = build_infidelity_samples(model, x, eval_masks, xb)
    drops = eval_infd.extras["drops"]

    fns = _row_functions(stack_fn.names, results)
    values = np.full((len(fns), len(COLUMNS)), np.nan)
    maps = []
    for r, fn in enumerate(fns):
        phi = fn(base)
        maps.append(phi)
        dist = sensitivity_distortions(phi, [fn(st) for st in eval_stacks])
        values[r, 0] = dist.mean()
        values[r, 1] = dist.max()
        values[r, 2] = estimate(eval_infd, phi)
        values[r, 3] = infd_normalized_eval(model, x, eval_masks, xb, phi, drops)
        try:
            values[r, 4] = fcor_eval(model, x, eval_masks, xb, phi, drops)
        except (DegenerateCorrelation, InvalidInput):
            pass

    record = {"index": index, "weights": {}, "in_sample": {}, "diagnostics": {}}
    for spec, res in zip(config.strategies, results):
        label = spec.label
        if res.weights is not None and res.strategy.kind != "var":
            record["weights"][label] = res.weights.omega
        if res.Q is not None:
            w = res.weights.omega
            obj, min_diag = float(w @ res.Q @ w), float(np.min(np.diag(res.Q)))
            record["in_sample"][label] = {"objective": obj, "min_diagonal": min_diag,
                                          "vertex_dominance": obj <= min_diag + 1e-9}
        if res.solution is not None:
            record["diagnostics"][label] = {"kkt_residual": res.solution.kkt_residual,
                                            "converged": res.solution.converged,
                                            "iterations": res.solution.iterations}
    return values, record, maps


def run_bench(config, out=None, book=None):
    """Run the configured bench; writes artifacts when ``out`` or ``config.output_dir`` is set."""
    out = out or config.output_dir
    shape = config.dataset.shape
    book = book or StreamBook(Rng(config.seed))
    images, _ = gen_blob_dataset(config.dataset.n, shape, config.dataset.fraction_range,
                                 config.dataset.noise_level, book.claim("data", DATASET_STREAM))
    model = config.model.build(shape)
    stack_fn = StackFunction(model, config.roster(), shape)
    rows = list(stack_fn.names) + [s.label for s in config.strategies]
    meta = {"tool": "optagg", "version": __version__, "seed": config.seed,
            "config": config.model_dump(mode="json")}
    workers = config.threads or os.cpu_count() or 1
    values, records, heatmaps = [], [], []
    partial = False
    try:
        if workers == 1:
            outputs = (_process_image(i, x, model, stack_fn, config, book)
                       for i, x in enumerate(images))
            for res in outputs:
                values.append(res[0]); records.append(res[1]); heatmaps.append(res[2])
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_process_image, i, x, model, stack_fn, config, book)
                           for i, x in enumerate(images)]
                for fut in futures:
                    res = fut.result()
                    values.append(res[0]); records.append(res[1]); heatmaps.append(res[2])
    except ModelUnavailable:
        partial = True
        if out:
            _table(rows, values, records, meta, True).write(out)
        raise
    finally:
        close = getattr(model, "close", None)
        if close:
            close()
    if book.paths("agg") & book.paths("eval"):
        raise InvalidInput("aggregation and evaluation streams overlap")
    table = _table(rows, values, records, meta, partial)
    if out:
        table.write(out)
        if config.heatmaps:
            for rec, maps in zip(records, heatmaps):
                for name, phi in zip(rows, maps):
                    export_heatmap(np.clip(phi, 0, 1), Path(out) / "heatmaps" /
                                   f"img_{rec['index']:04d}_{name}.pgm", shape)
    return table


def _table(rows, values, records, meta, partial):
    arr = np.array(values) if values else np.zeros((0, len(rows), len(COLUMNS)))
    return ResultsTable(rows, arr, records, meta, partial)
