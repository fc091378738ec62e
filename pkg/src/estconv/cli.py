"""Command line entry point: ``estconv run|audit|rates|dump-mesh``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .axioms import C_CAP, Q_RED, audit_records, write_axiom_report
from .boundary_mesh import refine_boundary, write_boundary_mesh
from .driver import (estimate_rate, load_config, make_boundary_domain, read_records,
                     read_run_log, run_adaptive, write_run)
from .errors import ConfigError, EstconvError, InputError, PreconditionError, SolverError
from .mesh2d import make_initial_mesh, refine_uniform, write_mesh

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_AUDIT = 0, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="estconv", description="Adaptive mesh refinement laboratory.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the adaptive loop")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    a = sub.add_parser("audit", help="check stability and reduction on a run directory")
    a.add_argument("--out", required=True)
    a.add_argument("--q", type=float, default=Q_RED)
    a.add_argument("--c-cap", type=float, default=C_CAP)
    t = sub.add_parser("rates", help="print the log-log slope of the estimator")
    t.add_argument("--out", required=True)
    t.add_argument("--window", type=int, default=8)
    d = sub.add_parser("dump-mesh", help="write an initial mesh")
    d.add_argument("--domain", required=True)
    d.add_argument("--refine", type=int, default=0)
    d.add_argument("--n0", type=int, default=1)
    d.add_argument("--out", required=True)
    return p


def _run(args):
    cfg = load_config(args.config)
    log = run_adaptive(cfg)
    write_run(log, args.out, timing=args.timing)
    last = log.records[-1]
    print(f"{len(log.records)} levels, {last.n_elements} elements, eta = {last.eta:.6e} "
          f"({log.stop_reason})")
    return EXIT_OK


def _audit(args):
    records = read_records(args.out)
    rows, ok = audit_records(records, q=args.q, c_cap=args.c_cap)
    write_axiom_report(rows, Path(args.out) / "axiom_report.csv")
    failed = [r["pair"] for r in rows if not r["pass"]]
    print(f"{len(rows)} pairs audited, {len(failed)} failed" + (f": {', '.join(failed)}" if failed else ""))
    return EXIT_OK if ok else EXIT_AUDIT


def _rates(args):
    slope = estimate_rate(read_run_log(args.out), args.window)
    print(repr(round(slope, 12)))
    return EXIT_OK


def _dump(args):
    if ":" in args.domain and not Path(args.domain).exists():
        mesh = make_boundary_domain(args.domain, args.n0)
        for _ in range(args.refine):
            mesh, _ = refine_boundary(mesh, range(mesh.n_elements))
        write_boundary_mesh(mesh, args.out)
    else:
        mesh = make_initial_mesh(args.domain)
        if args.refine:
            mesh, _ = refine_uniform(mesh, args.refine)
        write_mesh(mesh, args.out)
    print(f"wrote {mesh.n_elements} elements to {args.out}")
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    handler = {"run": _run, "audit": _audit, "rates": _rates, "dump-mesh": _dump}[args.command]
    try:
        return handler(args)
    except (ConfigError, InputError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except EstconvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
