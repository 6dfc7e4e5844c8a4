"""Command-line entry point.

Exit codes: 0 success, 1 config error, 2 runtime/protocol error,
3 embedding failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, EmbeddingFailure, ProtocolError
from .harness import (
    FIGURES, ExperimentConfig, dumps_report, embedding_failures, emit_figure_data, load_report,
    run_experiment,
)

log = logging.getLogger("qkdstego")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_EMBED = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    p.add_argument("--out", help="directory for the JSON report and CSV figure data")
    p.add_argument("--workers", type=int, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdstego", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--trials", type=int)
    _common(run)

    curve = sub.add_parser("mdep-curve", help="minimum discrimination error versus embedding rate")
    curve.add_argument("--rates", type=float, nargs="+")
    curve.add_argument("--bias", type=float)
    _common(curve)

    eff = sub.add_parser("efficiency-table", help="basis-usable fraction for O4/E4/CV-BB84/CV-B92")
    eff.add_argument("--signals", type=int, default=100_000)
    eff.add_argument("--alpha", type=float)
    eff.add_argument("--x0", type=float)
    _common(eff)

    st = sub.add_parser("steganalyze", help="detection power of the distribution test")
    st.add_argument("--config")
    st.add_argument("--rates", type=float, nargs="+")
    st.add_argument("--samples", type=int)
    st.add_argument("--trials", type=int)
    st.add_argument("--significance", type=float)
    st.add_argument("--intercept-fraction", type=float)
    st.add_argument("--measurement", choices=["random_bb84_basis", "optimal_povm"])
    _common(st)

    fig = sub.add_parser("figure", help="write CSV data for one figure from a saved report")
    fig.add_argument("report")
    fig.add_argument("figure", choices=FIGURES)
    fig.add_argument("--out", help="output file (stdout if omitted)")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    if args.command == "run":
        return ExperimentConfig.load(args.config, seed=args.seed, out_dir=args.out,
                                     workers=args.workers, trials=args.trials)
    base = {"seed": args.seed if args.seed is not None else 0, "out_dir": args.out,
            "workers": args.workers}
    if args.command == "mdep-curve":
        base.update(experiment="mdep_curve", rates=args.rates, bias=args.bias)
    elif args.command == "efficiency-table":
        base.update(experiment="efficiency_table", n_signals=args.signals, alpha=args.alpha, x0=args.x0)
    else:
        base.update(experiment="steganalysis_sweep", rates=args.rates, samples=args.samples,
                    trials=args.trials, significance=args.significance,
                    intercept_fraction=args.intercept_fraction, measurement=args.measurement)
        return ExperimentConfig.load(args.config, **base)
    return ExperimentConfig.from_dict({k: v for k, v in base.items() if v is not None})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "figure":
        try:
            text = emit_figure_data(load_report(args.report), args.figure)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read report: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if args.out:
            Path(args.out).write_bytes(text.encode("ascii"))
        else:
            sys.stdout.write(text)
        return EXIT_OK

    try:
        cfg = _config_from_args(args)
    except (ConfigError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmbeddingFailure as exc:
        print(f"embedding failure: {exc}", file=sys.stderr)
        return EXIT_EMBED
    except (ProtocolError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if not cfg.out_dir:
        sys.stdout.write(dumps_report(report) + "\n")
    log.info("finished %s in %.2fs", cfg.experiment, report["timing"]["seconds"])
    failures = embedding_failures(report)
    if failures:
        print(f"embedding failures: {failures} of {cfg.trials} trials", file=sys.stderr)
        return EXIT_EMBED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
