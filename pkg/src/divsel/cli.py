"""Command-line entry point: ``divsel <subcommand> ...``.

Exit codes: 0 success, 1 usage or config error, 2 data error,
3 internal invariant violation (including failed oracle checks).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, build_run_config, objective_config, read_config_file
from .embeddings import cosine_kernel, load_embeddings, write_embeddings
from .errors import ConfigError, DataError, DivselError, InvariantViolation
from .objective import ObjectiveConfig
from .oracle import run_default_suite
from .prompt import enumerate_permutations
from .runner import run_select
from .selector import METHODS, lambda_bound_probe
from .synthetic import generate_synthetic

log = logging.getLogger("divsel")


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; we reserve 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# flag -> RunConfig field
SELECT_FLAGS = {
    "corpus": "corpus_path", "query": "query_path", "format": "format",
    "lambda": "lam", "lambda_stage1": "lambda_stage1", "lambda_stage2": "lambda_stage2",
    "k1": "k1", "k": "k", "method": "method", "seed": "seed", "output_dir": "output_dir",
    "emit_prompt": "emit_prompt", "template": "template_path",
    "task_description": "task_description", "corpus_text": "corpus_text",
    "query_text": "query_text", "demo_order": "demo_order", "per_query": "per_query",
    "residual_floor": "residual_floor", "allow_negative_gain": "allow_negative_gain",
    "emit_kernel": "emit_kernel",
}


def _add_run_flags(p):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--corpus", help="corpus embeddings")
    p.add_argument("--query", help="query embeddings")
    p.add_argument("--format", choices=("text", "binary"))
    p.add_argument("--lambda", type=float, help="diversity weight (default 0.1)")
    p.add_argument("--lambda-stage1", type=float)
    p.add_argument("--lambda-stage2", type=float)
    p.add_argument("--k1", type=int, help="Stage 1 budget (default 100)")
    p.add_argument("--k", type=int, help="demonstrations per prompt (default 3)")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--emit-prompt", action="store_const", const=True)
    p.add_argument("--template", help="prompt template file")
    p.add_argument("--task-description")
    p.add_argument("--corpus-text", help="id<TAB>text file for demonstration inputs")
    p.add_argument("--query-text", help="id<TAB>text file for query inputs")
    p.add_argument("--demo-order", choices=("descending", "ascending"),
                   help="prompt demo order by Stage 2 score (default descending)")
    p.add_argument("--per-query", action="store_const", const=True,
                   help="rank Stage 2 separately for each query")
    p.add_argument("--residual-floor", type=float)
    p.add_argument("--allow-negative-gain", action="store_const", const=True)
    p.add_argument("--emit-kernel", action="store_const", const=True)


def _run_config(args) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {field: getattr(args, flag) for flag, field in SELECT_FLAGS.items()}
    return build_run_config(file_values, overrides)


def cmd_select(args) -> int:
    result = run_select(_run_config(args))
    for w in result.document["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(result.artifacts["report_txt"].read_text(encoding="utf-8"), end="")
    return 0


def cmd_grid(args) -> int:
    base = _run_config(args)
    methods = args.methods.split(",") if args.methods else [base.method]
    lambdas = [float(x) for x in args.lambdas.split(",")] if args.lambdas else [base.lam]
    root = Path(base.output_dir)
    configs = []
    for method in methods:
        for lam in lambdas:
            out = root / f"{method}_lambda{lam:g}"
            configs.append(replace(base, method=method, lam=lam, output_dir=str(out)))
    for cfg in configs:
        objective_config(cfg)  # reject contradictions before any run starts
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(run_select, configs))
    for cfg, res in zip(configs, results):
        sel = res.document["dispersion"]["selected"]
        mean = "-" if sel is None else f"{sel['mean_pairwise_sim']:.6f}"
        print(f"{cfg.output_dir}\t{len(res.report.stage1)}\t{mean}")
    return 0


def cmd_oracle(args) -> int:
    config = ObjectiveConfig(lam=args.lam, k1=min(args.k1, args.n), k=1)
    reports = run_default_suite(args.instances, seed=args.seed, n=args.n, d=args.d, config=config)
    text = "".join(r.to_text() + "\n" for r in reports)
    print(text, end="")
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle_report.txt").write_text(text, encoding="utf-8")
        doc = {"instances": args.instances, "seed": args.seed, "n": args.n, "d": args.d,
               "config": config.to_dict(), "properties": [r.to_dict() for r in reports]}
        (out / "oracle_report.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")
    if not all(r.passed for r in reports):
        raise InvariantViolation("oracle checks reported failures")
    return 0


def cmd_probe(args) -> int:
    try:
        raw = Path(args.corpus).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read corpus file {args.corpus}: {exc.strerror}") from None
    corpus = load_embeddings(raw, args.format, name=args.corpus)
    if len(corpus) == 0:
        raise DataError(f"{args.corpus}: corpus is empty")
    kernel = cosine_kernel(corpus)
    config = ObjectiveConfig(lam=args.lam, k1=args.k1, k=1)
    res = lambda_bound_probe(kernel, range(len(corpus)), config, args.trials, args.seed)
    est = res["max_valid_lambda_estimate"]
    res["max_valid_lambda_estimate"] = "+inf" if math.isinf(est) else est
    for v in res["violations"]:
        v["S"] = [corpus.ids[i] for i in v["S"]]
        v["x"] = corpus.ids[v["x"]]
    print(json.dumps(res, indent=2, sort_keys=True))
    return 0


def cmd_gen_synth(args) -> int:
    es = generate_synthetic(args.n, args.d, args.clusters, args.noise, args.seed, prefix=args.prefix)
    write_embeddings(es, args.output, args.format)
    return 0


def cmd_permute(args) -> int:
    demos = list(args.items)
    if args.file:
        demos += [line for line in Path(args.file).read_text(encoding="utf-8").split("\n") if line]
    for order in enumerate_permutations(demos, args.limit):
        print("\t".join(order))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="divsel", description="Diversity-enhanced two-stage demonstration selection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("select", help="run both selection stages and write artifacts")
    _add_run_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("grid", help="run select over methods x lambdas")
    _add_run_flags(p)
    p.add_argument("--methods", help="comma-separated methods")
    p.add_argument("--lambdas", help="comma-separated lambda values")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("oracle", help="run the property and brute-force checks")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--d", type=int, default=12)
    p.add_argument("--k1", type=int, default=4)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("probe-lambda", help="estimate the largest lambda keeping gains nonnegative")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("text", "binary"), default="text")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--k1", type=int, default=100)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gen-synth", help="write a clustered synthetic corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="s")
    p.add_argument("--format", choices=("text", "binary"), default="text")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("permute", help="list every ordering of a few demos")
    p.add_argument("items", nargs="*")
    p.add_argument("--file", help="one demo per line")
    p.add_argument("--limit", type=int, default=720)
    p.set_defaults(func=cmd_permute)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
