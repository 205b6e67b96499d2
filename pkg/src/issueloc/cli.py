"""Command-line entry point: ``issueloc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import ConfigError, IssueLocError

log = logging.getLogger("issueloc")


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("run configuration (flags override the config file)")
    g.add_argument("--config", type=Path, help="YAML configuration file")
    g.add_argument("--repo", help="path to the git repository")
    g.add_argument("--head", help="head ref to mine (default HEAD)")
    g.add_argument("--project", help="issue key prefix, e.g. HADOOP")
    g.add_argument("--issues", help="issue export (JSONL)")
    g.add_argument("--output", "-o", help="output directory (default ./out)")
    g.add_argument("--workers", "-j", type=int, help="parallel worker processes")
    g.add_argument("--extensions", help="comma-separated source file extensions")
    g.add_argument("--models", help="comma-separated models or 'all'")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="issueloc",
                                     description="Mine issue-linked commits and evaluate file localisation models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="extract and refine issue-commit links")
    _common(p)

    p = sub.add_parser("build", help="build the labelled dataset from mined links")
    _common(p)
    p.add_argument("--links", type=Path, help="links file (default <output>/links.jsonl)")

    p = sub.add_parser("evaluate", help="rank files for each issue and compute metrics")
    _common(p)
    p.add_argument("--dataset", type=Path, help="dataset file (default <output>/dataset.jsonl)")
    p.add_argument("--split", choices=("validation", "test", "all"), help="which split to evaluate")
    p.add_argument("--save-rankings", action="store_true", help="also write rankings.jsonl")
    p.add_argument("--grid", action="store_true",
                   help="evaluate the configured preprocessing grid on the validation split")

    p = sub.add_parser("rank", help="rank the files of one commit against issue text")
    _common(p)
    p.add_argument("commit", help="commit whose file tree is ranked")
    p.add_argument("issue_text", type=Path, help="file holding the issue text ('-' for stdin)")
    p.add_argument("-k", type=int, help="number of results (default 10)")
    p.add_argument("--model", help="model to use (default: first configured)")

    p = sub.add_parser("analyze", help="issue-type and identifier statistics")
    _common(p)
    p.add_argument("--metrics", type=Path, help="metrics file (default <output>/metrics.jsonl)")
    p.add_argument("--dataset", type=Path, help="dataset file (default <output>/dataset.jsonl)")
    p.add_argument("--model", help="model whose rows are analysed")

    p = sub.add_parser("report", help="combine project output directories into summary tables")
    p.add_argument("dirs", nargs="+", type=Path, help="per-project output directories")
    p.add_argument("--output", "-o", type=Path, help="directory for report.txt")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for name in ("repo", "head", "project", "issues", "output", "workers", "extensions", "models"):
        value = getattr(args, name, None)
        if value is not None:
            out[name] = value
    return out


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    # imported lazily so `--help` stays fast
    from . import pipeline

    if args.command == "report":
        print(pipeline.run_report(args.dirs, args.output), end="")
        return 0

    cfg = load_config(args.config, _overrides(args))
    if args.command == "mine":
        _dump(pipeline.run_mine(cfg))
    elif args.command == "build":
        _dump(pipeline.run_build(cfg, args.links))
    elif args.command == "evaluate":
        _dump(pipeline.run_evaluate(cfg, args.dataset, args.split, args.save_rankings, args.grid))
    elif args.command == "rank":
        if args.k is not None and args.k < 1:
            raise ConfigError("-k must be positive")
        if str(args.issue_text) == "-":
            text = sys.stdin.read()
        else:
            try:
                text = args.issue_text.read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read issue text: {exc}") from exc
        for i, (path, value) in enumerate(pipeline.run_rank(cfg, args.commit, text, args.k, args.model), 1):
            print(f"{i}\t{value:.9g}\t{path}")
    elif args.command == "analyze":
        _dump(pipeline.run_analyze(cfg, args.metrics, args.dataset, args.model))
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except IssueLocError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
