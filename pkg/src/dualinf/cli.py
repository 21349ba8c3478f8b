"""Command line: ``dualinf run | evaluate | report``.

Exit codes: 0 success, 2 partial failure, 1 fatal.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backend import HashingEmbedder, ResponseCache, SentenceTransformerEmbedder
from .harness import (
    EXIT_FATAL,
    EXIT_OK,
    METHODS,
    HarnessError,
    RunConfig,
    build_backend,
    cmd_evaluate,
    cmd_report,
    cmd_run,
)
from .metrics.meteor import load_synonyms


def _load_backend_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualinf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a method over the dataset")
    run.add_argument("--dataset", required=True)
    run.add_argument("--method", choices=METHODS, default="dual-inf")
    run.add_argument("--variant", choices=["dual-inf", "fi", "fi-em-star", "fi-em", "dual-inf-star"],
                     default="dual-inf")
    run.add_argument("--beta", type=int, default=3)
    run.add_argument("--lambda", dest="max_iterations", type=int, default=5)
    run.add_argument("--runs", type=int, default=5)
    run.add_argument("--temperature", type=float, default=0.1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--subset", default="all", help="all | rare | specialty:<name>")
    run.add_argument("--rare-list", help="rare-disease list, one name per line")
    run.add_argument("--paths", type=int, default=5, help="sc-cot reasoning paths")
    run.add_argument("--backend-config", help="JSON file: role -> backend spec")
    run.add_argument("--cache-dir")
    run.add_argument("--out", required=True)
    run.add_argument("--concurrency", type=int, default=1)

    ev = sub.add_parser("evaluate", help="score a run directory against gold")
    ev.add_argument("run_dir")
    ev.add_argument("--dataset", required=True, help="gold dataset")
    ev.add_argument("--match-mode", choices=["exact", "judge"], default="exact")
    ev.add_argument("--judge-backend", help="JSON backend spec file for the judge")
    ev.add_argument("--cache-dir")
    ev.add_argument("--embedder", default="hashing",
                    help="'hashing' (offline) or 'st:<sentence-transformers model>'")
    ev.add_argument("--synonyms", help="term<TAB>synonym table for METEOR")
    ev.add_argument("--resamples", type=int, default=10_000)
    ev.add_argument("--out")

    rep = sub.add_parser("report", help="compare evaluation directories")
    rep.add_argument("eval_dirs", nargs="+")
    rep.add_argument("--out", required=True)
    rep.add_argument("--resamples", type=int, default=10_000)
    rep.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            config = RunConfig(
                dataset=args.dataset, method=args.method, variant=args.variant,
                backends=_load_backend_config(args.backend_config), beta=args.beta,
                max_iterations=args.max_iterations, runs=args.runs,
                temperature=args.temperature, seed=args.seed, subset=args.subset,
                rare_list=args.rare_list, paths=args.paths, cache_dir=args.cache_dir,
                out=args.out, concurrency=args.concurrency,
            )
            result = cmd_run(config)
            print(f"{result.out}: exit {result.exit_code}, failed notes: {len(result.failed)}")
            return result.exit_code

        if args.command == "evaluate":
            judge = None
            if args.match_mode == "judge":
                if not args.judge_backend:
                    raise HarnessError("--match-mode judge needs --judge-backend")
                cache = ResponseCache(args.cache_dir) if args.cache_dir else None
                judge = build_backend(_load_backend_config(args.judge_backend), cache)
            if args.embedder.startswith("st:"):
                embedder = SentenceTransformerEmbedder(args.embedder[3:])
            else:
                embedder = HashingEmbedder()
            synonyms = load_synonyms(args.synonyms) if args.synonyms else None
            out = cmd_evaluate(args.run_dir, args.dataset, args.match_mode, judge, embedder,
                               synonyms, args.out, resamples=args.resamples)
            print(out)
            return EXIT_OK

        out = cmd_report(args.eval_dirs, args.out, resamples=args.resamples, seed=args.seed)
        print(out)
        return EXIT_OK
    except (HarnessError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
