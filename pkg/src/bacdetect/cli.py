"""Command-line entry point: ``bacdetect <verb> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import PipelineConfig, load_config, override
from .errors import BacError
from .evaluation import load_report, markdown_table

EXIT_OK, EXIT_INPUT, EXIT_CONNECT, EXIT_DEGENERATE, EXIT_SCHEMA, EXIT_USAGE = 0, 2, 3, 4, 5, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON pipeline config")
    p.add_argument("--seed", type=int)
    p.add_argument("--offline", action="store_true", default=None,
                   help="use the deterministic generator instead of an LLM")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="bacdetect", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("mine", parents=[common], help="mine endpoint templates into a knowledge base")
    p.add_argument("--logs")
    p.add_argument("--kb")
    p.add_argument("--threshold", type=float)
    p.add_argument("--depth", type=int)

    p = sub.add_parser("simulate", parents=[common], help="generate a labeled traffic corpus")
    p.add_argument("--kb")
    p.add_argument("--out", dest="corpus")
    p.add_argument("--n", type=int)
    p.add_argument("--report")
    p.add_argument("--llm-url")
    p.add_argument("--target-url")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--max-attempts", type=int)

    p = sub.add_parser("featurize", parents=[common], help="write the feature matrix of a corpus")
    p.add_argument("--corpus")
    p.add_argument("--bundle")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train the sequence model and gated detector")
    p.add_argument("--corpus")
    p.add_argument("--kb")
    p.add_argument("--bundle")
    p.add_argument("--backend", choices=("ngram", "attention"))
    p.add_argument("--train-frac", type=float)
    p.add_argument("--iterations", type=int, help="boosting iterations")
    p.add_argument("--epochs", type=int, help="neural expert passes")

    p = sub.add_parser("detect", parents=[common], help="score unlabeled traffic")
    p.add_argument("--bundle")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gap", type=int, help="session inactivity gap in ms")

    p = sub.add_parser("eval", parents=[common], help="evaluate a bundle on held-out data")
    p.add_argument("--corpus")
    p.add_argument("--kb")
    p.add_argument("--bundle")
    p.add_argument("--out-dir", default="eval")
    p.add_argument("--train-frac", type=float)
    p.add_argument("--test")

    p = sub.add_parser("report", parents=[common], help="render a metrics file as a markdown table")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out")
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    g = lambda name: getattr(args, name, None)  # noqa: E731
    return override(
        cfg, seed=g("seed"), offline=g("offline"), logs=g("logs"), kb=g("kb"), corpus=g("corpus"),
        bundle=g("bundle"), gap_ms=g("gap"),
        **{"miner.threshold": g("threshold"), "miner.depth": g("depth"),
           "simulator.n": g("n"), "simulator.llm_url": g("llm_url"), "simulator.target_url": g("target_url"),
           "simulator.model": g("model"), "simulator.temperature": g("temperature"),
           "simulator.parallelism": g("parallelism"), "simulator.max_attempts": g("max_attempts"),
           "training.backend": g("backend"), "training.tree_iterations": g("iterations"),
           "training.neural_epochs": g("epochs"), "evaluation.train_frac": g("train_frac")})


def _need(cfg, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise UsageError(f"--{name} (or '{name}' in the config file) is required")


def dispatch(args) -> int:
    cfg = _config(args)
    verb = args.verb
    if verb == "mine":
        _need(cfg, "logs")
        items, coverage = pipeline.run_mine(cfg)
        print(f"templates: {len(items)}  coverage: {coverage:.4f}  -> {cfg.kb}")
    elif verb == "simulate":
        _need(cfg, "corpus")
        if cfg.simulator.n < 1:
            raise UsageError("--n must be at least 1")
        seqs, report = pipeline.run_simulate(cfg, args.report)
        print(report.to_json(), end="")
        print(f"sequences written: {len(seqs)} -> {cfg.corpus}")
    elif verb == "featurize":
        _need(cfg, "corpus")
        n = pipeline.run_featurize(cfg, args.out)
        print(f"feature rows: {n} -> {args.out}")
    elif verb == "train":
        _need(cfg, "corpus")
        if not 0 < cfg.evaluation.train_frac <= 1:
            raise UsageError("--train-frac must lie in (0, 1]")
        _, report = pipeline.run_train(cfg)
        print("train " + markdown_table(report), end="")
        print(f"bundle -> {cfg.bundle}")
    elif verb == "detect":
        verdicts = pipeline.run_detect(cfg, args.input, args.out)
        flagged = sum(v["label"] == "violation" for v in verdicts)
        print(f"sequences: {len(verdicts)}  violations: {flagged} -> {args.out}")
    elif verb == "eval":
        _need(cfg, "corpus")
        if args.train_frac is not None and not 0 < args.train_frac < 1:
            raise UsageError("--train-frac must lie strictly between 0 and 1")
        report = pipeline.run_eval(cfg, args.out_dir, args.test)
        print(markdown_table(report), end="")
    elif verb == "report":
        table = markdown_table(load_report(args.metrics))
        if args.out:
            from .traffic import atomic_write_text

            atomic_write_text(args.out, table)
        print(table, end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except UsageError as exc:
        print(f"bacdetect {args.verb}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BacError as exc:
        print(f"bacdetect {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"bacdetect {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
