"""Command-line front end.

Exit codes: 0 success, 1 input error (missing file, parse or validation
failure, bad flag), 2 numerical abort (a training instance has zero
probability).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import SpnError, SpnValidationError, ZeroProbabilityInstance
from .inference import MARGINALIZED, evaluate, evaluate_partition
from .learn import Algorithm, LearnerConfig, TrainRun, init_weights, normalize_locally, train
from .mixture import cardinality

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
MAX_EXACT_DIGITS = 64


class InputError(Exception):
    pass


class NumericAbort(Exception):
    pass


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None


def _load_model(path: str):
    try:
        return io.parse_spn(_read_text(path))
    except SpnError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_data(path: str) -> io.Dataset:
    try:
        return io.parse_dataset(_read_text(path), source=path)
    except SpnError as exc:
        raise InputError(f"{path}: {exc}") from None


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SPN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"SPN_THREADS must be an integer, got {env!r}") from None
    return 1


def _write_out(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def parse_query(query: str, num_vars: int) -> np.ndarray:
    toks = [t.strip() for t in query.split(",")]
    if len(toks) != num_vars:
        raise InputError(f"query {query!r} has {len(toks)} entries, model has {num_vars} variables")
    out = []
    for t in toks:
        if t == "*":
            out.append(MARGINALIZED)
        elif t in ("0", "1"):
            out.append(int(t))
        else:
            raise InputError(f"malformed query entry {t!r}; use 0, 1 or *")
    return np.array(out, dtype=np.int8)


# -- subcommands ---------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        graph, _ = io.parse_spn(_read_text(args.model))
    except SpnValidationError as exc:
        for v in exc.report.violations:
            print(f"INVALID {v.kind}: {v}")
        return EXIT_INPUT
    except SpnError as exc:
        raise InputError(f"{args.model}: {exc}") from None
    print(f"OK ({len(graph.nodes)} nodes, {graph.num_vars} variables, {graph.num_edges} sum edges)")
    return EXIT_OK


def cmd_eval(args) -> int:
    graph, w = _load_model(args.model)
    if args.query:
        X = np.stack([parse_query(q, graph.num_vars) for q in args.query])
    elif args.data:
        X = _load_data(args.data).rows
        if X.shape[1] != graph.num_vars:
            raise InputError(f"{args.data}: {X.shape[1]} columns, model has {graph.num_vars} variables")
    else:
        raise InputError("eval needs a data file or at least one --query")
    logz = evaluate_partition(graph, w)
    logp = np.atleast_1d(evaluate(graph, w, X).log_root) - logz
    for v in logp:
        print(repr(float(v)))
    return EXIT_OK


def cmd_cardinality(args) -> int:
    graph, _ = _load_model(args.model)
    card = cardinality(graph)
    text = str(card.exact)
    if len(text) <= MAX_EXACT_DIGITS:
        print(text)
    else:
        print(f"10^{card.log10:.6f}")
    return EXIT_OK


def cmd_normalize(args) -> int:
    graph, w = _load_model(args.model)
    _write_out(io.serialize_spn(graph, normalize_locally(graph, w)), args.output)
    return EXIT_OK


def cmd_gen(args) -> int:
    try:
        graph = io.generate_random_spn(
            args.vars, args.depth, args.sum_fanout, args.prod_fanout, args.seed
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _write_out(io.serialize_spn(graph, init_weights(graph, args.seed)), args.output)
    return EXIT_OK


def _config(args, algo: str) -> LearnerConfig:
    try:
        return LearnerConfig(
            algorithm=Algorithm(algo),
            max_iters=args.max_iters,
            stop_tol=args.tol,
            init_step=args.step,
            shrink=args.shrink,
            proj_margin=args.margin,
            smoothing=args.smooth,
            seed=args.seed,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _initial_weights(args, graph, w_file):
    if args.init_weights:
        try:
            return io.parse_weights(_read_text(args.init_weights), graph)
        except SpnError as exc:
            raise InputError(f"{args.init_weights}: {exc}") from None
    if args.warm_start:
        return w_file
    return None


def _train_one(graph, data, config, w0, threads) -> TrainRun:
    try:
        return train(graph, data, config, w0=w0, threads=threads)
    except ZeroProbabilityInstance as exc:
        raise NumericAbort(str(exc)) from None


def cmd_train(args) -> int:
    graph, w_file = _load_model(args.model)
    data = _load_data(args.data)
    if data.num_vars != graph.num_vars:
        raise InputError(f"{args.data}: {data.num_vars} columns, model has {graph.num_vars} variables")
    config = _config(args, args.algo)
    run = _train_one(graph, data, config, _initial_weights(args, graph, w_file), _threads(args))
    if args.out_curve:
        io.export_curve(run, args.out_curve, timing=args.timing)
    if args.out_model:
        Path(args.out_model).write_text(io.serialize_spn(graph, run.final_w))
    print(f"algorithm: {config.algorithm.value}")
    print(f"iterations: {run.iters_used}")
    print(f"stop_reason: {run.stop_reason.value}")
    print(f"final_train_ll: {run.final_ll!r}")
    return EXIT_OK


SUMMARY_HEADER = ("algorithm", "final_train_ll", "iterations", "stop_reason", "wall_s")


def cmd_compare(args) -> int:
    graph, w_file = _load_model(args.model)
    data = _load_data(args.data)
    if data.num_vars != graph.num_vars:
        raise InputError(f"{args.data}: {data.num_vars} columns, model has {graph.num_vars} variables")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    w0 = _initial_weights(args, graph, w_file)
    threads = _threads(args)

    rows = []
    for algo in Algorithm:
        run = _train_one(graph, data, _config(args, algo.value), w0, threads)
        io.export_curve(run, out_dir / f"curve_{algo.value}.csv", timing=args.timing)
        rows.append((algo.value, repr(run.final_ll), run.iters_used, run.stop_reason.value,
                     f"{run.wall_time:.3f}" if args.timing else ""))
        print(f"{algo.value:>5}  final_train_ll={run.final_ll:.6f}  iterations={run.iters_used:>3}  "
              f"stop={run.stop_reason.value}  wall={run.wall_time:.2f}s")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(rows)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------

def _add_learning_flags(p: argparse.ArgumentParser) -> None:
    defaults = LearnerConfig()
    p.add_argument("--max-iters", type=int, default=defaults.max_iters)
    p.add_argument("--tol", type=float, default=defaults.stop_tol,
                   help="stop when the mean LL per instance changes by less than this")
    p.add_argument("--step", type=float, default=defaults.init_step, help="initial line-search step")
    p.add_argument("--shrink", type=float, default=defaults.shrink, help="backtracking factor")
    p.add_argument("--margin", type=float, default=defaults.proj_margin, help="PGD projection margin")
    p.add_argument("--smooth", type=float, default=defaults.smoothing, help="CCCP additive smoothing")
    p.add_argument("--seed", type=int, default=defaults.seed, help="seed for the random initial weights")
    p.add_argument("--init-weights", metavar="FILE", help="weights-only file to start from")
    p.add_argument("--warm-start", action="store_true", help="start from the model file's weights")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for per-instance statistics (default: $SPN_THREADS or 1)")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock times in the CSVs (makes output non-reproducible)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spnlearn", description="Sum-product network inference and weight learning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check completeness and decomposability")
    p.add_argument("model", help="SPN file, or - for stdin")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="log-probability of instances or partial queries")
    p.add_argument("model")
    p.add_argument("data", nargs="?", help="dataset file of complete instances")
    p.add_argument("--query", action="append", help="comma list of 0, 1 or * (marginalised)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cardinality", help="number of induced trees")
    p.add_argument("model")
    p.set_defaults(func=cmd_cardinality)

    p = sub.add_parser("normalize", help="rewrite weights so every sum node sums to one")
    p.add_argument("model")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("gen", help="random layered SPN with random normalised weights")
    p.add_argument("--vars", type=int, required=True)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--sum-fanout", type=int, default=2)
    p.add_argument("--prod-fanout", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="learn weights with one algorithm")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--algo", choices=[a.value for a in Algorithm], default="cccp")
    p.add_argument("--out-curve", metavar="CSV")
    p.add_argument("--out-model", metavar="SPN")
    _add_learning_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="run PGD, EG, SMA and CCCP from the same start")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out-dir", required=True)
    _add_learning_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SpnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
