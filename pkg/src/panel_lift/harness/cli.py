"""``panel-lift`` command line entry point.

Exit codes: 0 success, 1 estimator failure, 2 input/output or configuration
error. Failures print a JSON error document on stderr.
"""

import argparse
import json
import sys

from panel_lift.errors import ConfigError, DimensionMismatch, PanelLiftError, ParseError
from panel_lift.harness import io, runners
from panel_lift.harness.config import load_config, parse_config

EXIT_OK = 0
EXIT_ESTIMATOR = 1
EXIT_IO = 2


def _u64(text):
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return val


def build_parser():
    p = argparse.ArgumentParser(prog="panel-lift", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate treatment effects from CSV files")
    est.add_argument("--o", required=True, help="outcome matrix CSV")
    est.add_argument("--z", required=True, nargs="+", help="treatment matrix CSV(s)")
    lam = est.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float, help="fixed nuclear-norm weight")
    lam.add_argument("--tune-rank", type=_positive_int, help="tune lambda down to this rank")
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--header", action="store_true", help="skip the first line of every CSV")
    est.add_argument("--out", help="write the JSON document here instead of stdout")

    for name, helptext in (
        ("simulate", "write one synthetic instance"),
        ("coverage", "confidence interval coverage experiment"),
        ("benchmark", "estimator error comparison"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="experiment config JSON")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=_u64, help="override the master seed")
        if name != "simulate":
            s.add_argument("--trials", type=_positive_int, help="override the trial count")
            s.add_argument("--jobs", type=_positive_int, help="worker processes")
            s.add_argument("--alpha", type=float, help="override alpha")

    chk = sub.add_parser("check", help="identification diagnostics for a treatment pattern")
    src = chk.add_mutually_exclusive_group(required=True)
    src.add_argument("--o", help="outcome matrix; tangent space of its rank-r truncation")
    src.add_argument("--m-star", help="counterfactual matrix; tangent space of M* itself")
    chk.add_argument("--z", required=True)
    chk.add_argument("--rank", type=_positive_int)
    chk.add_argument("--header", action="store_true")
    chk.add_argument("--out")

    fx = sub.add_parser("fixtures", help="emit reference fixture files")
    fx.add_argument("--out", required=True)
    fx.add_argument("--n", type=int, default=8, help="size of the Prop-2 style pair (even)")
    fx.add_argument("--seed", type=_u64, default=0)
    return p


def _config(args):
    cfg = load_config(args.config)
    overrides = {}
    for key in ("seed", "trials", "alpha"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if overrides:
        raw = dict(cfg.raw)
        raw.update(overrides)
        cfg = parse_config(raw)
    return cfg


def _emit(doc, out=None):
    text = io.dumps(doc)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dispatch(args):
    if args.command == "estimate":
        doc = runners.run_estimate(args.o, args.z, lam=args.lam, tune_rank=args.tune_rank, alpha=args.alpha, header=args.header)
        _emit(doc, args.out)
    elif args.command == "simulate":
        _emit(runners.run_simulate(_config(args), args.out))
    elif args.command == "coverage":
        summary, _ = runners.run_coverage(_config(args), args.out, jobs=args.jobs)
        _emit(summary)
    elif args.command == "benchmark":
        doc, _ = runners.run_benchmark(_config(args), args.out, jobs=args.jobs)
        _emit(doc)
    elif args.command == "check":
        doc = runners.run_check(args.z, rank=args.rank, o_path=args.o, m_star_path=args.m_star, header=args.header)
        _emit(doc, args.out)
    elif args.command == "fixtures":
        _emit(runners.run_fixtures(args.out, n=args.n, seed=args.seed))


def error_document(exc):
    err = {"code": getattr(exc, "code", "io_error"), "message": str(exc)}
    if isinstance(exc, ParseError):
        err.update(path=str(exc.path) if exc.path else None, line=exc.line, column=exc.column)
    if isinstance(exc, ConfigError):
        err["problems"] = exc.problems
    return {"error": err}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except (ParseError, ConfigError, DimensionMismatch, OSError) as exc:
        sys.stderr.write(json.dumps(error_document(exc)) + "\n")
        return EXIT_IO
    except PanelLiftError as exc:
        sys.stderr.write(json.dumps(error_document(exc)) + "\n")
        return EXIT_ESTIMATOR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
