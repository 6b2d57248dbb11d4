"""End-to-end runs: data, network, initializer, training, artifacts."""
from dataclasses import dataclass, replace
import csv
import logging
import os

import numpy as np

from .data import generate_toy, load_csv
from .exceptions import NonFiniteLoss
from .initializers import initialize
from .numkernel import make_rng
from .train import evaluate, train_loop, write_curves
from .vnet import Classification, Regression, build_network, save_network

__all__ = ["RunResult", "SUMMARY_HEADER", "NC_FACTOR", "load_dataset", "make_network",
           "is_converged", "run_single", "run_experiment", "summarize", "write_summary",
           "evaluate_checkpoint"]

log = logging.getLogger(__name__)

SUMMARY_HEADER = ("init", "metric_mean", "metric_std", "mnll_mean", "mnll_std",
                  "n_seeds", "nc_count")
NC_FACTOR = 10.0


@dataclass
class RunResult:
    init: str
    seed: int
    records: list
    converged: bool
    curves_path: str = None
    checkpoint_path: str = None

    @property
    def final(self):
        return self.records[-1]


def load_dataset(config, seed):
    if config.source == "toy":
        return generate_toy(config.n_toy, seed)
    return load_csv(config.source, config.task, config.label_columns,
                    config.test_fraction, seed)


def make_network(config, data):
    if config.task == "classification":
        k = data.y_train.shape[1]
        likelihood = Classification(k, config.init.alpha)
        out = k
    else:
        likelihood = Regression()
        out = data.y_train.shape[1]
    return build_network(data.x_train.shape[1], out, config.hidden, config.activation,
                         likelihood, config.input_shape)


def _write_diagnostics(diagnostics, path):
    rows = [d.as_row() for d in diagnostics]
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def is_converged(records):
    """False when the final test metric is non-finite or ``NC_FACTOR`` times the initial one."""
    if not records:
        return False
    first, last = records[0].test_metric, records[-1].test_metric
    return bool(np.isfinite(last) and last <= NC_FACTOR * first)


def run_single(config, init_name, seed, out_dir=None, data=None):
    """Initialize and train one network; writes curves/checkpoint when ``out_dir`` is set."""
    data = data if data is not None else load_dataset(config, seed)
    net = make_network(config, data)
    spec = replace(config.init, strategy=init_name, seed=seed)
    _, diagnostics = initialize(net, spec, data.x_train, data.y_train)
    train_cfg = replace(config.train, seed=seed)
    converged = True
    try:
        records = train_loop(net, data.train, data.test, train_cfg)
    except NonFiniteLoss as exc:
        log.warning("%s seed %d diverged: %s", init_name, seed, exc)
        records, converged = exc.records, False
    converged = converged and is_converged(records)
    result = RunResult(init_name, seed, records, converged)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.curves_path = os.path.join(out_dir, f"curves_{init_name}_{seed}.csv")
        result.checkpoint_path = os.path.join(out_dir, f"model_{init_name}_{seed}.npz")
        write_curves(records, result.curves_path)
        save_network(net, result.checkpoint_path)
        _write_diagnostics(diagnostics, os.path.join(out_dir, f"init_{init_name}_{seed}.csv"))
    return result, net


def summarize(results):
    """Summary rows (dicts keyed by :data:`SUMMARY_HEADER`) per initializer."""
    by_init = {}
    for res in results:
        by_init.setdefault(res.init, []).append(res)
    rows = []
    for name, runs in by_init.items():
        ok = [r for r in runs if r.converged and r.records]
        row = {"init": name, "n_seeds": len(runs), "nc_count": len(runs) - len(ok)}
        if ok:
            metric = np.array([r.final.test_metric for r in ok])
            mnll = np.array([r.final.test_mnll for r in ok])
            row.update(metric_mean=metric.mean(), metric_std=metric.std(),
                       mnll_mean=mnll.mean(), mnll_std=mnll.std())
        else:
            row.update(metric_mean="NC", metric_std="NC", mnll_mean="NC", mnll_std="NC")
        rows.append(row)
    return rows


def write_summary(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            writer.writerow([row[k] if isinstance(row[k], (str, int)) else repr(float(row[k]))
                             for k in SUMMARY_HEADER])


def run_experiment(config):
    """Sweep every (initializer, seed) pair in ``config``; returns ``(status, rows)``.

    Diverged runs count as ``NC`` in ``summary.csv`` instead of failing the
    sweep. The status is 0 when at least one run converged.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    results = []
    for seed in config.seeds:
        data = load_dataset(config, seed)
        for name in config.inits:
            log.info("running %s with seed %d", name, seed)
            result, _ = run_single(config, name, seed, config.out_dir, data)
            results.append(result)
    rows = summarize(results)
    write_summary(rows, os.path.join(config.out_dir, "summary.csv"))
    status = 0 if any(r.converged for r in results) else 1
    return status, rows


def evaluate_checkpoint(net, data, n_mc, seed=0):
    return evaluate(net, data.x_test, data.y_test, n_mc, make_rng(seed, 3))
