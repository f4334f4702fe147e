"""
mcfa main entry point

This is the main entry point for the application, responsible for:
- Parsing the subcommand and its options
- Collecting ``--key value`` configuration overrides
- Running the matching RunOrchestrator command and mapping errors to exit codes
"""

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

from .modules.Configuration import ConfigError
from .modules.Model import TrainingAbortedError
from .modules.Orchestrator import AnalysisKind, RunOrchestrator, SplitPart, UsageError


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ABORTED = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-cfg",
        "--config",
        help="Run configuration file (TOML); defaults apply when omitted",
        type=str,
        default=None,
    )
    parser.add_argument(
        "-q",
        "--quiet",
        help="No console output besides the result line",
        action="store_true",
    )


def _add_split(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--split",
        help="Part of the configured split to use (default: test)",
        choices=[p.value for p in SplitPart],
        default=SplitPart.TEST.value,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcfa",
        description="mcfa - sentence classification with translations as extra views",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Any configuration key can be overridden with --key value or --section.key value.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    # Overrides such as --mode must never abbreviate-match --model.
    train = commands.add_parser("train", help="Train per the configured mode", allow_abbrev=False)
    _add_common(train)

    sweep = commands.add_parser(
        "sweep", help="Train one model per translation (original + that view)", allow_abbrev=False
    )
    _add_common(sweep)

    evaluate = commands.add_parser("eval", help="Evaluate a saved model", allow_abbrev=False)
    _add_common(evaluate)
    evaluate.add_argument("--model", help="Model file", type=Path, required=True)
    _add_split(evaluate)

    ensemble = commands.add_parser(
        "ensemble", help="Average the class probabilities of saved models", allow_abbrev=False
    )
    _add_common(ensemble)
    ensemble.add_argument("--models", help="Model files", type=Path, nargs="+", required=True)
    _add_split(ensemble)

    analyze = commands.add_parser("analyze", help="Write analysis tables", allow_abbrev=False)
    _add_common(analyze)
    analyze.add_argument("--model", help="Model file", type=Path, required=True)
    analyze.add_argument("--kind", choices=[k.value for k in AnalysisKind], required=True)
    analyze.add_argument("--components", help="PCA components (default: 2)", type=int, default=2)
    analyze.add_argument("--query", help="Example index for --kind neighbors", type=int, default=None)
    analyze.add_argument("--neighbors", help="Neighbors per query (default: 5)", type=int, default=5)
    _add_split(analyze)

    synthetic = commands.add_parser(
        "gen-synthetic", help="Write the synthetic corpus and word vectors", allow_abbrev=False
    )
    _add_common(synthetic)
    synthetic.add_argument("--out", help="Target directory (default: output.dir)", type=Path, default=None)

    return parser


def parse_overrides(extra: Sequence[str]) -> dict[str, str]:
    """
    Turns leftover ``--key value`` / ``--key=value`` pairs into overrides.

    Raises:
        UsageError: on a dangling key or a bare value.
    """
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or len(token) == 2:
            raise UsageError(f"unexpected argument {token!r}")
        key, sep, value = token[2:].partition("=")
        if not sep:
            if i + 1 >= len(extra):
                raise UsageError(f"--{key} needs a value")
            value = extra[i + 1]
            i += 1
        overrides[key] = value
        i += 1
    return overrides


def _report_error(orchestrator: RunOrchestrator | None, ex: Exception) -> None:
    """Logs a failed command; stderr still gets it before a logger exists or under -q."""
    log = orchestrator.log if orchestrator is not None else None
    if log is not None:
        log.log_error(str(ex))
        log.persistStatus()
    if log is None or log.console is None:
        sys.stderr.write(f"Error: {ex}\n")


def run(argv: Sequence[str] | None = None) -> int:
    """Runs one command and returns its exit code."""
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as ex:
        return EXIT_OK if ex.code == 0 else EXIT_USAGE

    orchestrator: RunOrchestrator | None = None
    try:
        overrides = parse_overrides(extra)
        orchestrator = RunOrchestrator(args.config, overrides, quiet=args.quiet)
        orchestrator.initialize()
        if args.command == "train":
            orchestrator.train()
        elif args.command == "sweep":
            orchestrator.sweep()
        elif args.command == "eval":
            orchestrator.evaluate(args.model, SplitPart(args.split))
        elif args.command == "ensemble":
            orchestrator.ensemble(list(args.models), SplitPart(args.split))
        elif args.command == "analyze":
            orchestrator.analyze(
                args.model,
                AnalysisKind(args.kind),
                SplitPart(args.split),
                components=args.components,
                query=args.query,
                neighbors=args.neighbors,
            )
        else:
            orchestrator.gen_synthetic(args.out)
    except (ConfigError, UsageError) as ex:
        _report_error(orchestrator, ex)
        return EXIT_USAGE
    except TrainingAbortedError as ex:
        _report_error(orchestrator, ex)
        return EXIT_ABORTED
    except (ValueError, KeyError, OSError, ArithmeticError) as ex:
        # Data, format, corruption, compatibility and analysis errors.
        _report_error(orchestrator, ex)
        return EXIT_DATA
    return EXIT_OK


def main() -> NoReturn:
    """
    mcfa main entrance function
    """
    sys.exit(run())


if __name__ == "__main__":
    main()
