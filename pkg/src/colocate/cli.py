"""
Command-line front end.

Exit status: 0 on success, 1 on usage errors, 2 on data errors. Every CSV the
tool writes starts with a ``#`` line holding the tool version and the full run
specification as JSON, so a file can be traced back to the command that made it.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, studies
from .evaluation import SIGNALS, EvaluationError, ExperimentConfig, run_experiment, write_results
from .ingest import (TraceFormatError, build_profiles, parse_events_csv, parse_usage_csv, preprocess,
                     write_profile_summary, write_usage_csv)
from .packing import ALGORITHMS, ESTIMATORS, Estimator, PackingConfig, PackingError, TaskStats, pack, sqrt_var
from .stats import StatsError
from .sweep import Grid, InstanceSpec, SweepError, default_jobs, derive_seed, run_sweep
from .synth import DEFAULT_LENGTH_RANGE, SynthError, generate_instance, instance_paths, parse_mix, read_instance, write_matrix

log = logging.getLogger("colocate")

_ESTIMATOR_FLAGS = {"gpa": "rho", "cantelli": "b", "av": "f", "perc": "k"}
_ALGORITHM_ALIASES = {"firstfit": "first_fit", "first_fit": "first_fit", "ff": "first_fit",
                      "bestfit": "best_fit", "best_fit": "best_fit", "bf": "best_fit"}
_DATA_ERRORS = (TraceFormatError, SynthError, PackingError, StatsError, EvaluationError, SweepError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- arguments

def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _algorithm(text):
    try:
        return _ALGORITHM_ALIASES[text.lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown algorithm {text!r}; use firstfit or bestfit") from None


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_pool_args(p, tasks_default=1000):
    p.add_argument("--tasks", type=_positive_int, default=tasks_default, help="tasks per synthetic instance")
    p.add_argument("--mix", help="archetype mix, e.g. near_zero_spike:0.8,exponential_like:0.2")
    p.add_argument("--seed", type=int, default=0, help="master seed")


def _add_estimator_args(p):
    p.add_argument("--estimator", choices=ESTIMATORS, required=True)
    p.add_argument("--rho", type=float, help="GPA target violation probability")
    p.add_argument("--b", type=float, help="Cantelli multiplier")
    p.add_argument("--f", type=float, help="av multiplier")
    p.add_argument("--k", type=float, help="perc rank")
    p.add_argument("--capacity", type=_positive_float, default=1.0)
    p.add_argument("--algorithm", type=_algorithm, default="first_fit", help="firstfit or bestfit")
    p.add_argument("--no-rebalance", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="colocate", description="Stochastic bin packing of cluster tasks.")
    parser.add_argument("--version", action="version", version=f"colocate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="clean a raw usage trace into the canonical CSV")
    p.add_argument("--usage", required=True, help="usage CSV (task_id,interval_index,inst_usage,avg_usage)")
    p.add_argument("--events", help="events CSV (task_id,event_code)")
    p.add_argument("--threshold", type=_positive_int, default=24, help="long-task threshold in records")
    p.add_argument("--include-short", action="store_true")
    p.add_argument("--profiles", help="also write a per-task summary CSV here")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate synthetic task profiles")
    _add_pool_args(p, tasks_default=100)
    p.add_argument("--records", type=_positive_int, help="records per task (default: log-uniform length)")
    p.add_argument("--realizations", type=_positive_int, help="also write inst/avg realization matrices")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pack", help="pack the tasks of a usage CSV")
    p.add_argument("--input", required=True, help="canonical usage CSV")
    _add_estimator_args(p)
    p.add_argument("--machines", help="machines summary CSV (default: <out>.machines.csv)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="pack and score synthetic instances")
    _add_estimator_args(p)
    _add_pool_args(p)
    p.add_argument("--instances", type=_positive_int, default=1)
    p.add_argument("--realizations", type=_positive_int, default=10_000)
    p.add_argument("--clairvoyance", type=float, default=1.0)
    p.add_argument("--signal", choices=SIGNALS, default="inst")
    p.add_argument("--instance", help="evaluate a stored instance (stem of .csv/.inst.bin/.avg.bin) instead")
    p.add_argument("--jobs", type=_positive_int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="run a grid of experiments with checkpointing")
    p.add_argument("--estimators", type=_str_list, required=True, help="e.g. gpa:0.1,gpa:0.05,cantelli:4.4")
    p.add_argument("--capacities", type=_float_list, default=[1.0])
    p.add_argument("--clairvoyances", type=_float_list, default=[1.0])
    p.add_argument("--signals", type=_str_list, default=["inst"])
    p.add_argument("--algorithm", type=_algorithm, default="first_fit")
    p.add_argument("--no-rebalance", action="store_true")
    _add_pool_args(p)
    p.add_argument("--instances", type=_positive_int, default=50)
    p.add_argument("--realizations", type=_positive_int, default=10_000)
    p.add_argument("--jobs", type=_positive_int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("study-normality", help="A-D rejection rate of summed task usage per group size")
    _add_pool_args(p)
    p.add_argument("--input", help="usage CSV to draw tasks from (default: synthetic pool)")
    p.add_argument("--group-sizes", type=_int_list, default=[10, 20, 50, 100])
    p.add_argument("--trials", type=_positive_int, default=100)
    p.add_argument("--realizations", type=_positive_int, default=10_000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("study-percentiles", help="Gaussian vs empirical percentile errors")
    _add_pool_args(p)
    p.add_argument("--input", help="usage CSV to draw tasks from (default: synthetic pool)")
    p.add_argument("--group-size", type=_positive_int, default=20)
    p.add_argument("--percentile", type=float, default=99.0)
    p.add_argument("--trials", type=_positive_int, default=1000)
    p.add_argument("--realizations", type=_positive_int, default=10_000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("study-clusters", help="k-means over task usage histograms")
    _add_pool_args(p)
    p.add_argument("--input", help="usage CSV to draw tasks from (default: synthetic pool)")
    p.add_argument("--clusters", type=_positive_int, default=16)
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------- helpers

def _run_spec(args) -> dict:
    spec = {k: v for k, v in vars(args).items() if k not in ("jobs",) and not callable(v)}
    return {"command": spec.pop("command"), **dict(sorted(spec.items()))}


def _header(args) -> str:
    return f"# colocate {__version__} runspec={json.dumps(_run_spec(args), sort_keys=False, separators=(',', ':'))}\n"


def _write_text(path, args, body: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_header(args))
        fh.write(body)


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _estimator(args) -> Estimator:
    flag = _ESTIMATOR_FLAGS[args.estimator]
    value = getattr(args, flag)
    if value is None:
        raise UsageError(f"--estimator {args.estimator} requires --{flag}")
    for other in set(_ESTIMATOR_FLAGS.values()) - {flag}:
        if getattr(args, other) is not None:
            raise UsageError(f"--{other} does not apply to --estimator {args.estimator}")
    try:
        return Estimator(args.estimator, value)
    except PackingError as exc:
        raise UsageError(str(exc)) from None


def _packing_config(args) -> PackingConfig:
    return PackingConfig(args.capacity, _estimator(args), args.algorithm, not args.no_rebalance)


def _mix(args):
    if not args.mix:
        return None
    try:
        return tuple(parse_mix(args.mix))
    except SynthError as exc:
        raise UsageError(str(exc)) from None


def _task_pool(args, records=None):
    if getattr(args, "input", None):
        return build_profiles(parse_usage_csv(args.input))
    length = (records, records) if records else DEFAULT_LENGTH_RANGE
    return generate_instance(args.tasks, _mix(args), R=1, seed=args.seed, length_range=length).tasks


def _jobs(args) -> int:
    return args.jobs if args.jobs else default_jobs()


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> str:
    records = parse_usage_csv(args.usage)
    events = parse_events_csv(args.events) if args.events else ()
    profiles, summary = preprocess(records, events, args.threshold, args.include_short)
    buf = io.StringIO()
    write_usage_csv(profiles, buf)
    _write_text(args.out, args, buf.getvalue())
    if args.profiles:
        buf = io.StringIO()
        write_profile_summary(profiles, buf)
        _write_text(args.profiles, args, buf.getvalue())
    return ("ingest: " + " ".join(f"{k}={v}" for k, v in summary.items()) + f" written={len(profiles)}")


def cmd_synth(args) -> str:
    length = (args.records, args.records) if args.records else DEFAULT_LENGTH_RANGE
    instance = generate_instance(args.tasks, _mix(args), R=args.realizations or 1, seed=args.seed,
                                 length_range=length)
    buf = io.StringIO()
    write_usage_csv(instance.tasks, buf)
    _write_text(args.out, args, buf.getvalue())
    msg = f"synth: tasks={instance.n_tasks} mean_total={math.fsum(t.mu for t in instance.tasks):.4f}"
    if args.realizations:
        _, inst_path, avg_path = instance_paths(Path(args.out).with_suffix(""))
        write_matrix(inst_path, instance.inst_matrix)
        write_matrix(avg_path, instance.avg_matrix)
        msg += f" realizations={args.realizations}"
    return msg


def cmd_pack(args) -> str:
    cfg = _packing_config(args)
    profiles = build_profiles(parse_usage_csv(args.input))
    if not profiles:
        raise TraceFormatError(f"{args.input}: no tasks")
    result = pack([TaskStats.from_samples(p.task_id, p.inst.samples) for p in profiles], cfg)
    assign = [(tid, mach.index) for mach in result.machines for tid in mach.assigned]
    _write_text(args.out, args, _csv_text(assign, ("task_id", "machine_index")))
    machines_path = args.machines or str(Path(args.out).with_suffix(".machines.csv"))
    rows = [(m.index, len(m.assigned), repr(m.mu_sum), repr(sqrt_var(m))) for m in result.machines]
    _write_text(machines_path, args, _csv_text(rows, ("machine_index", "n_tasks", "mu_sum", "sqrt_var_sum")))
    return f"pack: tasks={len(profiles)} machines={result.m} estimator={cfg.estimator.label} algorithm={cfg.algorithm}"


def _evaluate_one(spec: InstanceSpec, cfg: ExperimentConfig, i: int):
    return run_experiment(spec.generate(i), cfg, instance_id=i)


def cmd_evaluate(args) -> str:
    pcfg = _packing_config(args)
    if not 0 < args.clairvoyance <= 1:
        raise UsageError("--clairvoyance must be in (0, 1]")
    if args.instance:
        instance = read_instance(args.instance)
        cfg = ExperimentConfig(pcfg, args.clairvoyance, args.signal, derive_seed(args.seed, 1))
        rows = [run_experiment(instance, cfg)]
    else:
        spec = InstanceSpec(args.tasks, args.realizations, _mix(args), args.seed)
        cfg = ExperimentConfig(pcfg, args.clairvoyance, args.signal, derive_seed(args.seed, 1))
        jobs = min(_jobs(args), args.instances)
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(_evaluate_one, [spec] * args.instances, [cfg] * args.instances,
                                     range(args.instances)))
        else:
            rows = [_evaluate_one(spec, cfg, i) for i in range(args.instances)]
    buf = io.StringIO()
    write_results(rows, buf)
    _write_text(args.out, args, buf.getvalue())
    return (f"evaluate: rows={len(rows)} mean_m={np.mean([r.m for r in rows]):.4f} "
            f"mean_q={np.mean([r.q for r in rows]):.6g}")


def cmd_sweep(args) -> str:
    try:
        estimators = [Estimator.parse(e) for e in args.estimators]
    except PackingError as exc:
        raise UsageError(str(exc)) from None
    bad = [s for s in args.signals if s not in SIGNALS]
    if bad:
        raise UsageError(f"unknown signal(s) {', '.join(bad)}; expected {' or '.join(SIGNALS)}")
    if any(not 0 < c <= 1 for c in args.clairvoyances):
        raise UsageError("--clairvoyances must lie in (0, 1]")
    if any(not c > 0 for c in args.capacities):
        raise UsageError("--capacities must be positive")
    grid = Grid(estimators, tuple(args.capacities), tuple(args.clairvoyances), tuple(args.signals),
                args.algorithm, not args.no_rebalance, args.instances,
                InstanceSpec(args.tasks, args.realizations, _mix(args), args.seed))
    try:
        grid.cells()
    except SweepError as exc:
        raise UsageError(str(exc)) from None
    rows = run_sweep(grid, Path(str(args.out) + ".cells"), jobs=_jobs(args))
    buf = io.StringIO()
    write_results(rows, buf)
    _write_text(args.out, args, buf.getvalue())
    return f"sweep: cells={len(grid.cells())} instances={args.instances} rows={len(rows)}"


def cmd_study_normality(args) -> str:
    if not args.group_sizes or min(args.group_sizes) < 8:
        raise UsageError("--group-sizes must be non-empty and every size at least 8")
    pool = _task_pool(args)
    rates = studies.total_usage_normality_study(pool, args.group_sizes, args.trials, args.seed, args.realizations)
    rows = [(n, args.trials, repr(r)) for n, r in rates.items()]
    _write_text(args.out, args, _csv_text(rows, ("group_size", "trials", "rejection_rate")))
    return "study-normality: " + " ".join(f"N={n}:{r:.3f}" for n, r in rates.items())


def cmd_study_percentiles(args) -> str:
    if not 0 < args.percentile < 100:
        raise UsageError("--percentile must be in (0, 100)")
    if args.group_size < 2:
        raise UsageError("--group-size must be at least 2")
    pool = _task_pool(args)
    errors = studies.percentile_prediction_error(pool, args.group_size, args.percentile, args.trials,
                                                 args.seed, args.realizations)
    rows = [(i, repr(e)) for i, e in enumerate(errors)]
    _write_text(args.out, args, _csv_text(rows, ("trial", "relative_error")))
    return (f"study-percentiles: k={args.percentile:g} group_size={args.group_size} "
            f"median_error={np.nanmedian(errors):.4g}")


def cmd_study_clusters(args) -> str:
    pool = _task_pool(args)
    if args.clusters > len(pool):
        raise UsageError(f"--clusters {args.clusters} exceeds the {len(pool)} available tasks")
    result, shares = studies.cluster_profiles(pool, args.clusters, args.seed)
    rows = [(t.task_id, int(c)) for t, c in zip(pool, result.assignments)]
    _write_text(args.out, args, _csv_text(rows, ("task_id", "cluster")))
    top = ", ".join(f"{s:.3f}" for s in sorted(shares, reverse=True)[:3])
    return f"study-clusters: tasks={len(pool)} clusters={args.clusters} largest_shares=[{top}]"


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "pack": cmd_pack,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "study-normality": cmd_study_normality,
    "study-percentiles": cmd_study_percentiles,
    "study-clusters": cmd_study_clusters,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        summary = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"colocate {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"colocate {args.command}: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
