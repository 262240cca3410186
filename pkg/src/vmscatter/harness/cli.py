"""Command line: ``vmscatter {simulate,asymptotics,verify,fields}``.

Exit codes: 0 all enabled checks pass, 1 a check failed, 2 configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ..asymptotics import ConsistencyError, DomainViolation
from ..fields import (BumpSource, PicardDivergence, QuadConfig, QuadratureError, SupportViolation,
                      eval_data, eval_S, eval_T)
from ..flow.characteristics import IntegrationError
from .config import ConfigError, load_config
from .report import report_text
from .scenarios import StageError, _data, _field, run_pipeline, run_scenario

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
NUMERICAL = (IntegrationError, QuadratureError, PicardDivergence, SupportViolation, DomainViolation,
             ConsistencyError, FloatingPointError)


def _common(p):
    p.add_argument("--config", help="scenario INI file (defaults when omitted)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--t-max", type=float, dest="t_max", help="final time")
    p.add_argument("--checks", help="comma separated check names (default: all)")
    p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="vmscatter", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "run the dynamics and write ensemble snapshots"),
                       ("asymptotics", "compute asymptotic charges and fields from the snapshots"),
                       ("verify", "run the full pipeline and the check suite")):
        _common(sub.add_parser(name, help=text))
    f = sub.add_parser("fields", help="point-evaluate one field piece")
    _common(f)
    f.add_argument("--piece", choices=("T", "S", "data", "prescribed"), default="T")
    f.add_argument("--t", type=float, required=True)
    f.add_argument("--x", type=float, nargs=3, required=True)
    f.add_argument("--source", choices=("free", "static"), default="free")
    f.add_argument("--rtol", type=float, default=1e-6)
    f.add_argument("--max-levels", type=int, default=4, dest="max_levels")
    return ap


def _config(args):
    cfg = load_config(args.config)
    kw = {}
    if args.out:
        kw["out"] = args.out
    if args.t_max is not None:
        kw["t_max"] = args.t_max
    if args.threads is not None:
        kw["threads"] = args.threads
    if args.checks is not None:
        kw["checks"] = tuple(c.strip() for c in args.checks.split(",") if c.strip())
    return cfg.with_overrides(**kw) if kw else cfg


def _fields(cfg, args):
    data = _data(cfg)
    t, x = args.t, np.asarray(args.x, float)
    quad = QuadConfig(rtol=args.rtol, max_levels=args.max_levels)
    if args.piece == "prescribed":
        E, B = _field(cfg, data).values(np.array([t]), x[None, :])
        E, B = E[0], B[0]
    elif args.piece == "data":
        E, B = eval_data(data, t, x, quad)
    else:
        src = BumpSource(data, args.source)
        r = eval_T(src, t, x, quad) if args.piece == "T" else eval_S(src, _field(cfg, data), t, x, quad)
        E, B = r.E, r.B
    print(f"E = {E[0]:.12e} {E[1]:.12e} {E[2]:.12e}")
    print(f"B = {B[0]:.12e} {B[1]:.12e} {B[2]:.12e}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "fields":
            _fields(cfg, args)
            return EXIT_OK
        if args.command == "simulate":
            st = run_pipeline(cfg, cfg.out, until="flow")
        elif args.command == "asymptotics":
            st = run_pipeline(cfg, cfg.out, until="fields", resume=True)
        else:
            report, st = run_scenario(cfg)
            sys.stdout.write(report_text(report))
            return EXIT_OK if report.passed else EXIT_CHECKS
        for k in sorted(st.artifacts):
            print(f"{k}: {st.artifacts[k]}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, ConfigError):
            return EXIT_CONFIG
        if isinstance(exc.cause, NUMERICAL):
            return EXIT_NUMERIC
        raise
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
