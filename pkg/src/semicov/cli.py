"""Command-line interface.

Subcommands: ``weak``, ``strong``, ``estimator``, ``tail`` run experiments
from a TOML config and write CSV (plus a JSON summary); ``bounds`` prints the
quantitative constants of a model; ``choi-dump`` serializes a covariance;
``poly-eval`` parses and reports a covariance polynomial.

Exit codes: 0 success, 1 config error, 2 invariant violation detected
mid-run.
"""
from __future__ import annotations

import argparse
import sys

from . import covpoly, moments
from .covariance import CovarianceError
from .harness import RUNNERS, ConfigError, RunConfig, write_outputs
from .models import ModelError
from .partitions import PartitionError

_RUN_COMMANDS = {
    "weak": "trace",
    "strong": "opnorm",
    "estimator": "eta-estimator",
    "tail": "tail",
}


def _add_common(p: argparse.ArgumentParser, config_required=True):
    p.add_argument("--config", required=config_required, help="TOML config file")
    p.add_argument("--seed", type=int, default=None, help="override run.seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads")
    p.add_argument("--out", default=None, help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semicov",
        description="operator-valued Gaussian ensembles: convergence experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _RUN_COMMANDS:
        p = sub.add_parser(name, help=f"{name} run from a config")
        _add_common(p)
        p.add_argument(
            "--timings", action="store_true",
            help="fill the wall_ms column (breaks byte-identical reruns)",
        )
    p = sub.add_parser("bounds", help="quantitative constants of a model")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="dimension (default: first of run.ns)")
    p = sub.add_parser("choi-dump", help="serialize a model covariance to JSON")
    _add_common(p)
    p.add_argument("--n", type=int, default=None)
    p = sub.add_parser("poly-eval", help="parse a polynomial; report canonical form")
    p.add_argument("--poly", required=True, help="polynomial in the text grammar")
    p.add_argument("--out", default=None)
    return parser


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _dispatch(args) -> int:
    if args.command in _RUN_COMMANDS:
        cfg = RunConfig.from_file(
            args.config, seed=args.seed, threads=args.threads,
            timings=getattr(args, "timings", False),
        )
        cfg.statistic = _RUN_COMMANDS[args.command]
        records, summary = RUNNERS[cfg.statistic](cfg)
        write_outputs(records, summary, args.out)
        return 0

    if args.command == "bounds":
        cfg = RunConfig.from_file(args.config, seed=args.seed)
        n = args.n if args.n is not None else cfg.ns[0]
        eta = cfg.model.covariance(n)
        _emit(moments.bounds(eta).to_json() + "\n", args.out)
        return 0

    if args.command == "choi-dump":
        cfg = RunConfig.from_file(args.config, seed=args.seed)
        n = args.n if args.n is not None else cfg.ns[0]
        _emit(cfg.model.covariance(n).to_json() + "\n", args.out)
        return 0

    if args.command == "poly-eval":
        try:
            poly = covpoly.parse_poly(args.poly)
        except covpoly.PolyParseError as exc:
            raise ConfigError(str(exc)) from exc
        lines = [
            f"canonical: {covpoly.format_poly(poly)}",
            f"terms: {len(poly.terms)}",
            f"depth: {covpoly.depth(poly)}",
            f"degree: {covpoly.degree(poly)}",
        ]
        _emit("\n".join(lines) + "\n", args.out)
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, ModelError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (CovarianceError, moments.MomentError, PartitionError,
            covpoly.AlphabetError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
