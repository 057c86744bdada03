"""
Command-line entry point.

    pmmh-qn run CONFIG            one chain per replicate, trace + summary
    pmmh-qn sweep CONFIG          (M, sigma_u) grid
    pmmh-qn hessian-study CONFIG  qN Hessian accuracy along exact-Hessian chains
    pmmh-qn benchmark CONFIG      proposal comparison table
    pmmh-qn gen-data CONFIG       write the synthetic data set

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import data as datasets
from .config import ConfigError, dump_config, load_config
from .diagnostics import summarize
from .experiments import (
    benchmark_proposals,
    benchmark_rows,
    build_model,
    derive_seed,
    hessian_accuracy_study,
    load_data,
    sweep_grid,
    sweep_scatter,
)
from .sampler import run_qn_chain

OUTPUT_ROOT_ENV = "PMMH_QN_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("pmmh_qn")


def output_dir(config):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = config.output_dir
    if root and not os.path.isabs(path):
        path = os.path.join(root, path)
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_jsonable)
        fh.write("\n")


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialise {type(value).__name__}")


def _write_rows(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _prepare(config, out):
    """Echo the config and load (or generate and persist) the data."""
    with open(os.path.join(out, "config.yaml"), "w") as fh:
        fh.write(dump_config(config))
    observations = load_data(config) if config.model != "gaussian" else None
    if observations is not None and "path" not in (config.data or {}):
        _persist_data(config, observations, out)
    return build_model(config, observations)


def _persist_data(config, observations, out):
    seed = (config.data or {}).get("seed", config.seed)
    path = os.path.join(out, "data.csv")
    datasets.write_dataset(config.model, observations, path)
    _write_json(os.path.join(out, "data.json"),
                {"model": config.model, "seed": seed, "path": "data.csv",
                 "synthetic": (config.data or {}).get("synthetic", {})})
    return path


def cmd_run(config, out):
    model = _prepare(config, out)
    summaries = []
    for r in range(config.replicates):
        seed = derive_seed(config.seed, r)
        suffix = "" if config.replicates == 1 else f"_r{r}"
        trace = run_qn_chain(model, config, seed)
        trace.to_csv(os.path.join(out, f"trace{suffix}.csv"))
        summary = summarize(trace, config.burnin, model.to_natural)
        record = {"seed": seed, **summary.to_dict()}
        _write_json(os.path.join(out, f"summary{suffix}.json"), record)
        summaries.append(record)
        log.info("replicate %d: acceptance %.3f, mean IF %.1f", r,
                 summary.acceptance_rate, summary.mean_if)
    if config.replicates > 1:
        keys = ("acceptance_rate", "correction_rate", "mean_if", "max_if", "mean_tes",
                "max_tes", "wall_time_per_iter")
        _write_json(os.path.join(out, "summary.json"), {
            "replicates": summaries,
            "median": {k: float(np.median([s[k] for s in summaries])) for k in keys},
        })


def cmd_sweep(config, out):
    model = _prepare(config, out)
    block = config.sweep
    M_values = block.get("M_values", [config.M])
    sigma_values = block.get("sigma_u_values", [config.sigma_u])
    grid = sweep_grid(model, M_values, sigma_values, config.replicates, config)
    _write_json(os.path.join(out, "sweep.json"),
                {"cells": [cell.to_dict() for cell in grid.values()]})
    rows = []
    for (M, sigma_u), cell in grid.items():
        for run in cell.runs:
            if run.summary is not None:
                rows.append({"M": M, "sigma_u": sigma_u, "seed": run.seed,
                             "acceptance": run.summary.acceptance_rate,
                             "mean_if": run.summary.mean_if,
                             "mean_tes": run.summary.mean_tes})
    _write_rows(os.path.join(out, "sweep_runs.csv"), rows)
    log.info("sweep finished: %d runs, %d scatter points", len(rows), len(sweep_scatter(grid)))


def cmd_hessian_study(config, out):
    model = _prepare(config, out)
    block = config.hessian_study
    p = model.n_theta
    M_values = block.get("M_values", [2, max(2, p // 2), p, 2 * p])
    study = hessian_accuracy_study(
        model, M_values, block.get("replicates", config.replicates), block.get("K", config.K),
        config, block.get("methods", ("BFGS", "LS", "SR1")), block.get("stride", 1))
    result = study.to_dict()
    _write_json(os.path.join(out, "hessian_study.json"), result)
    rows = [{"method": m, "M": row["M"], "median": row["median"], "q25": row["q25"],
             "q75": row["q75"], "fallback_rate": row["fallback_rate"]}
            for m, curve in result["curves"].items() for row in curve]
    _write_rows(os.path.join(out, "hessian_study.csv"), rows)


def pilot_covariance(model, config, pilot):
    """Posterior covariance from a pilot chain, used to scale random-walk baselines."""
    cfg = config.replace(method=pilot.get("method", "LS"), K=pilot.get("K", config.K),
                         burnin=pilot.get("burnin", config.burnin),
                         step_size=pilot.get("step_size", config.step_size),
                         adapt=pilot.get("adapt", config.adapt))
    trace = run_qn_chain(model, cfg, derive_seed(config.seed, 0, ("pilot",)))
    return np.atleast_2d(np.cov(trace.theta[cfg.burnin:].T))


def cmd_benchmark(config, out):
    model = _prepare(config, out)
    block = config.benchmark
    methods = block.get("methods", ["pmMH0", "LS"])
    overrides = {m: dict(v) for m, v in (block.get("overrides") or {}).items()}
    if "pilot" in block:
        cov = pilot_covariance(model, config, block["pilot"] or {})
        for m in ("pmMH0", "pmMH1"):
            overrides.setdefault(m, {}).setdefault("proposal_cov", cov.tolist())
    table = benchmark_proposals(model, methods, config.replicates, config, overrides)
    rows = benchmark_rows(table)
    _write_json(os.path.join(out, "benchmark.json"),
                {"rows": rows, "cells": {m: c.to_dict() for m, c in table.items()}})
    _write_rows(os.path.join(out, "benchmark.csv"), rows)
    for row in rows:
        log.info("%-6s acc %.3f  mean IF %.1f  max IF %.1f", row["method"], row["acceptance"],
                 row["mean_if"], row["max_if"])


def cmd_gen_data(config, out):
    if config.model == "gaussian":
        raise ConfigError("the gaussian target has no data to generate")
    spec = config.data or {}
    seed = spec.get("seed", config.seed)
    observations = datasets.generate(config.model, spec.get("synthetic", {}), seed)
    target = spec.get("path") or os.path.join(out, "data.csv")
    datasets.write_dataset(config.model, observations, target)
    _write_json(os.path.join(out, "data.json"),
                {"model": config.model, "seed": seed, "path": target,
                 "synthetic": spec.get("synthetic", {})})
    log.info("wrote %s", target)


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "hessian-study": cmd_hessian_study,
    "benchmark": cmd_benchmark,
    "gen-data": cmd_gen_data,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pmmh-qn",
        description="Correlated pseudo-marginal MH with quasi-Newton proposals.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("-o", "--output-dir", help="override the configured output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        if args.output_dir:
            config = config.replace(output_dir=args.output_dir)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = output_dir(config)
        COMMANDS[args.command](config, out)
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
