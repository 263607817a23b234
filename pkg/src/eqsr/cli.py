"""Command-line front end: saturation, extraction, fitting, benchmark runs,
estimator verification, and the storage-growth benchmark.

Every command is deterministic under (config, seed) and idempotent on its
output directory.  ``summary.json`` is byte-stable across reruns; wall-clock
timings go to stdout only.  Report commands also render matplotlib figures
next to their CSV output (``--no-plot`` to skip).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import egraph as eg
from .benchmarks import REGISTRY, get_benchmark, log_chain, sin_chain
from .config import ConfigError, RunConfig
from .dataopt import FitConfig, SequenceEvaluator
from .drl import Policy, TrainConfig, train
from .grammar import (
    Grammar,
    GrammarError,
    expand_sequence,
    expression_to_sequence,
    format_expression,
    parse_sequence,
    rule_text,
    sequence_to_string,
)
from .mcts import MctsConfig, run_mcts
from .rewrite import RuleError, rules_from_spec
from .verify import run_battery

SCHEMA_VERSION = 1


class CliError(Exception):
    pass


def _parse_seq(text: str):
    try:
        return parse_sequence(text)
    except GrammarError as exc:
        raise CliError(str(exc))


def _rules(spec: str):
    try:
        return rules_from_spec(spec)
    except (RuleError, GrammarError) as exc:
        raise CliError(str(exc))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# saturate


def cmd_saturate(args) -> int:
    seq = _parse_seq(args.seq)
    rules = _rules(args.rules)
    expr = expand_sequence(seq).expr
    graph, report = eg.equality_saturation(
        expr, rules, max_iter=args.max_iter, max_nodes=args.max_nodes
    )
    for key, value in report.as_dict().items():
        print(f"{key}={value}")
    if args.dot:
        Path(args.dot).write_text(eg.to_dot(graph), encoding="utf-8")
        print(f"dot={args.dot}")
    return 0


# ---------------------------------------------------------------------------
# extract


def cmd_extract(args) -> int:
    if args.k < 1:
        raise CliError("-k must be >= 1")
    seq = _parse_seq(args.seq)
    rules = _rules(args.rules)
    expr = expand_sequence(seq).expr
    graph, _ = eg.equality_saturation(
        expr, rules, max_iter=args.max_iter, max_nodes=args.max_nodes
    )
    if args.mode == "cost":
        sequences = [expression_to_sequence(eg.extract_cost(graph))]
    else:
        rng = np.random.default_rng(args.seed)
        sequences = eg.extract_random_walk(graph, rng, k=args.k, max_depth=args.max_depth)
    for s in sequences:
        print(sequence_to_string(s))
    return 0


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args) -> int:
    try:
        bench = get_benchmark(args.benchmark)
    except KeyError as exc:
        raise CliError(str(exc))
    dataset = bench.dataset(n_points=args.n_points, seed=args.seed, noise_std=args.noise)
    evaluator = SequenceEvaluator(dataset, FitConfig(), seed=args.seed)
    seq = _parse_seq(args.seq) if args.seq else parse_sequence(bench.sequence)
    fit = evaluator.fit(seq)
    print(f"expression={format_expression(expand_sequence(seq).expr)}")
    print(f"nmse={fit.nmse!r}")
    print(f"mse={fit.mse!r}")
    print(f"rmse={fit.rmse!r}")
    print(f"nrmse={fit.nrmse!r}")
    print(f"coefficients={list(fit.coefficients)!r}")
    print(f"converged={fit.converged}")
    return 0


# ---------------------------------------------------------------------------
# run


def _build_grammar(cfg: RunConfig, variables) -> Grammar:
    rules = []
    for op in str(cfg["grammar.ops"]).split(","):
        op = op.strip()
        if op:
            rules.append(rule_text(op))
    rules.append("A->const")
    for name in variables:
        rules.append(f"A->{name}")
    return Grammar(rules)


def _fit_config(cfg: RunConfig) -> FitConfig:
    return FitConfig(
        max_coeffs=int(cfg["fit.max_coeffs"]),
        tol=float(cfg["fit.tol"]),
        max_evals=int(cfg["fit.max_evals"]),
        restarts=int(cfg["fit.restarts"]),
    )


def cmd_run(args) -> int:
    try:
        cfg = RunConfig.from_file(args.config)
    except (ConfigError, OSError) as exc:
        raise CliError(str(exc))
    if args.seed is not None:
        cfg.values["run.seed"] = args.seed
    seed = int(cfg["run.seed"])
    algorithm = str(cfg["run.algorithm"])
    try:
        bench = get_benchmark(str(cfg["run.benchmark"]))
    except KeyError as exc:
        raise CliError(str(exc))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    dataset = bench.dataset(
        n_points=int(cfg["data.n_points"]), seed=seed,
        noise_std=float(cfg["run.noise_std"]),
    )
    timings["data"] = time.perf_counter() - t0

    grammar = _build_grammar(cfg, bench.variables)
    categories = [c.strip() for c in str(cfg["run.rule_categories"]).split(",") if c.strip()]
    rules = _rules(",".join(categories)) if categories else ()
    evaluator = SequenceEvaluator(dataset, _fit_config(cfg), seed=seed)
    early_stop = float(cfg["run.early_stop_nmse"]) or None

    t0 = time.perf_counter()
    if algorithm in ("mcts", "egg-mcts"):
        mcfg = MctsConfig(
            c=float(cfg["mcts.c"]),
            rollouts=int(cfg["mcts.rollouts"]),
            max_depth=int(cfg["mcts.max_depth"]),
            iterations=int(cfg["mcts.iterations"]),
            egg_enabled=algorithm == "egg-mcts",
            k_paths=int(cfg["mcts.k_paths"]),
            sat_max_iter=int(cfg["saturation.max_iter"]),
            sat_max_nodes=int(cfg["saturation.max_nodes"]),
            seed=seed,
            fit=_fit_config(cfg),
            early_stop_nmse=early_stop,
        )
        result = run_mcts(grammar, dataset, mcfg, rules=rules, evaluator=evaluator)
        trace_header = ["iteration", "tree_nodes", "best_nmse", "updated_paths"]
        trace_rows = [
            [r.iteration, r.tree_nodes, repr(r.best_nmse), r.updated_paths]
            for r in result.trace
        ]
        best_seq = result.best_sequence
    else:
        policy = Policy(grammar, max_len=int(cfg["policy.max_len"]))

        def reward_fn(expr, seq_indices):
            fit = evaluator.fit(tuple(grammar.rules[i] for i in seq_indices))
            return fit.reward, fit.nmse

        tcfg = TrainConfig(
            iterations=int(cfg["drl.iterations"]),
            batch=int(cfg["drl.batch"]),
            lr=float(cfg["drl.lr"]),
            entropy_weight=float(cfg["drl.entropy_weight"]),
            entropy_gamma=float(cfg["drl.entropy_gamma"]),
            estimator="egg" if algorithm == "egg-drl" else "standard",
            K=int(cfg["drl.k"]),
            baseline=str(cfg["drl.baseline"]),
            seed=seed,
            sat_max_iter=int(cfg["saturation.max_iter"]),
            sat_max_nodes=int(cfg["saturation.max_nodes"]),
            early_stop_nmse=early_stop,
        )
        result = train(policy, reward_fn, tcfg, rules=rules)
        trace_header = [
            "iteration", "mean_reward", "best_nmse",
            "estimator_mean", "estimator_std", "mean_k_used",
        ]
        trace_rows = [
            [r.iteration, repr(r.mean_reward), repr(r.best_nmse),
             repr(r.estimator_mean), repr(r.estimator_std), repr(r.mean_k_used)]
            for r in result.trace
        ]
        best_seq = (
            tuple(grammar.rules[i] for i in result.best_seq)
            if result.best_seq is not None else None
        )
    timings["search"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    top_k = sorted(
        ((key, fit) for key, fit in evaluator.cache.items() if math.isfinite(fit.nmse)),
        key=lambda item: (item[1].nmse, item[0]),
    )[: int(cfg["run.topk"])]
    best_fit = evaluator.fit(best_seq) if best_seq is not None else None
    summary = {
        "schema_version": SCHEMA_VERSION,
        "benchmark": bench.name,
        "algorithm": algorithm,
        "seed": seed,
        "config": {k: v for k, v in cfg.as_dict().items()},
        "best": None if best_fit is None else {
            "sequence": sequence_to_string(best_seq),
            "expression": format_expression(expand_sequence(best_seq).expr),
            "coefficients": list(best_fit.coefficients),
            "nmse": best_fit.nmse,
            "mse": best_fit.mse,
            "rmse": best_fit.rmse,
            "nrmse": best_fit.nrmse,
        },
        "top_k": [
            {"sequence": ", ".join(key), "nmse": fit.nmse} for key, fit in top_k
        ],
        "median_topk_nmse": (
            float(np.median([fit.nmse for _, fit in top_k])) if top_k else None
        ),
        "iterations_run": len(result.trace),
        "expressions_fitted": len(evaluator.cache),
        "trace_file": "trace.csv",
    }
    _write_json(out / "summary.json", summary)
    _write_csv(out / "trace.csv", trace_header, trace_rows)
    if not args.no_plot:
        from . import plots

        figure = out / "trace.png"
        if algorithm in ("mcts", "egg-mcts"):
            plots.plot_mcts_trace(result.trace, figure)
        else:
            plots.plot_drl_trace(result.trace, figure)
    timings["report"] = time.perf_counter() - t0

    for phase, seconds in timings.items():
        print(f"time.{phase}={seconds:.3f}s")
    print(f"summary={out / 'summary.json'}")
    if best_fit is not None:
        print(f"best_nmse={best_fit.nmse!r}")
    return 0


# ---------------------------------------------------------------------------
# verify-estimator


def cmd_verify_estimator(args) -> int:
    report = run_battery(seed=args.seed, draws=args.draws, forced_bug=args.forced_bug)
    for line in report.lines():
        print(line)
    if args.forced_bug:
        # the mutation is supposed to be caught
        caught = not report.passed
        print("forced-bug-detected=" + str(caught).lower())
        return 0 if caught else 1
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# memory-bench


def _chain_rules(family: str):
    if family == "log-chain":
        return [r for r in rules_from_spec("log-exp") if r.name.startswith("log-of-product")]
    return [r for r in rules_from_spec("trig") if r.name.startswith("sin-of-sum")]


def cmd_memory_bench(args) -> int:
    if args.n_min < 1 or args.n_max < args.n_min:
        raise CliError("need 1 <= n-min <= n-max")
    make = log_chain if args.family == "log-chain" else sin_chain
    rules = _chain_rules(args.family)
    rows = []
    for n in range(args.n_min, args.n_max + 1):
        expr = make(n)
        graph, report = eg.equality_saturation(expr, rules)
        variants = eg.count_choice_variants(graph)
        array_bytes = _array_bytes(graph, variants)
        rows.append({
            "n": n,
            "egraph_bytes": eg.serialized_size(graph),
            "egraph_nodes": report.nodes,
            "egraph_classes": report.classes,
            "array_bytes": array_bytes,
            "variants": variants,
        })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["n", "egraph_bytes", "egraph_nodes", "egraph_classes", "array_bytes", "variants"]
    _write_csv(out / "memory_bench.csv", header, [[r[h] for h in header] for r in rows])
    if not args.no_plot:
        from . import plots

        plots.plot_memory_bench(rows, out / "memory_bench.png")
    for r in rows:
        print(" ".join(f"{h}={r[h]}" for h in header))
    return 0


def _array_bytes(graph, variants: int, sample_cap: int = 4096) -> int:
    """Bytes to store every variant explicitly as its own sequence string.

    Enumerates derivation choices up to a cap and extrapolates by the mean
    sequence size beyond it.
    """
    if variants <= sample_cap:
        exprs = eg.enumerate_choice_variants(graph, limit=sample_cap)
        from .grammar import expression_to_sequence

        return sum(
            len(sequence_to_string(expression_to_sequence(e)).encode()) for e in exprs
        )
    exprs = eg.enumerate_expressions(graph, 200)
    from .grammar import expression_to_sequence

    mean = np.mean([
        len(sequence_to_string(expression_to_sequence(e)).encode()) for e in exprs
    ])
    return int(round(mean * variants))


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqsr",
        description="Equivalence-aware symbolic regression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("saturate", help="saturate an expression under rewrite rules")
    p.add_argument("--seq", required=True, help="rule sequence, comma separated")
    p.add_argument("--rules", default="commutative,log-exp,trig",
                   help="rule categories or a rule DSL file")
    p.add_argument("--max-iter", type=int, default=eg.DEFAULT_MAX_ITER)
    p.add_argument("--max-nodes", type=int, default=eg.DEFAULT_MAX_NODES)
    p.add_argument("--dot", default=None, help="write the saturated graph as DOT")
    p.set_defaults(func=cmd_saturate)

    p = sub.add_parser("extract", help="extract expressions from a saturated graph")
    p.add_argument("--seq", required=True)
    p.add_argument("--rules", default="commutative,log-exp,trig")
    p.add_argument("--mode", choices=("cost", "walk"), default="walk")
    p.add_argument("-k", type=int, default=10, help="walk samples to draw")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-depth", type=int, default=50)
    p.add_argument("--max-iter", type=int, default=eg.DEFAULT_MAX_ITER)
    p.add_argument("--max-nodes", type=int, default=eg.DEFAULT_MAX_NODES)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit", help="fit coefficients of an expression to a benchmark")
    p.add_argument("--benchmark", required=True, help=f"one of: {', '.join(sorted(REGISTRY))}")
    p.add_argument("--seq", default=None, help="expression to fit (default: the truth)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-points", type=int, default=2048)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("run", help="run a configured benchmark search")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override run.seed")
    p.add_argument("--out", default="out")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-estimator", help="run the gradient-estimator test battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=20000)
    p.add_argument("--forced-bug", action="store_true",
                   help="drop the mixture weights to prove the battery catches it")
    p.set_defaults(func=cmd_verify_estimator)

    p = sub.add_parser("memory-bench", help="storage growth of chain families")
    p.add_argument("--family", choices=("log-chain", "sin-chain"), required=True)
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--out", default="out")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_memory_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GrammarError, RuleError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
