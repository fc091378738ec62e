"""Run every problem with every marking strategy and audit the runs.

    python3 scripts/run_matrix.py [--fem-cap 50000] [--bem-cap 4096] [--out runs/]
"""
import argparse
import math
import time

from estconv.axioms import audit_records, estimator_convergence_report, fit_doerfler_contraction
from estconv.driver import RunConfig, estimate_rate, run_adaptive, write_run
from estconv.marking import MarkingConfig

PROBLEMS = {
    "poisson": dict(domain="lshape", f=1.0),
    "obstacle": dict(domain="unit_square", f=-20.0),
    "symm": dict(domain="square:0.4", f=1.0),
}
STRATEGIES = [("maximum", 0.5), ("equidistribution", 0.5), ("doerfler_sorted", 0.3),
              ("doerfler_sorted", 0.5), ("doerfler_sorted", 0.9)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--fem-cap", type=int, default=50_000)
    ap.add_argument("--bem-cap", type=int, default=4096)
    ap.add_argument("--out", default=None, help="write each run below this directory")
    args = ap.parse_args()

    print(f"{'problem':9s} {'strategy':20s} {'lev':>4s} {'N':>7s} {'eta':>10s} {'tail':>7s} "
          f"{'Cstab':>6s} {'Cred':>6s} {'rate':>7s} {'fit':>4s} {'sec':>6s}")
    for problem, opts in PROBLEMS.items():
        cap = args.bem_cap if problem == "symm" else args.fem_cap
        for strategy, theta in STRATEGIES:
            cfg = RunConfig(problem=problem, marking=MarkingConfig(strategy, theta),
                            max_elements=cap, **opts)
            t0 = time.perf_counter()
            log = run_adaptive(cfg)
            dt = time.perf_counter() - t0
            rows, ok = audit_records(log.records)
            c_stab = max((r["C_stab_est"] for r in rows if not math.isnan(r["C_stab_est"])), default=0.0)
            c_red = max((r["C_red_est"] for r in rows if not math.isnan(r["C_red_est"])), default=0.0)
            tail = estimator_convergence_report(log.records).tail_ratio
            fit = "-"
            if strategy.startswith("doerfler"):
                fit = "ok" if fit_doerfler_contraction(log.records, theta).passed else "FAIL"
            rate = estimate_rate(log, 8) if len(log.records) > 8 else float("nan")
            flag = "" if ok else "  AUDIT FAILED"
            print(f"{problem:9s} {strategy + ' ' + str(theta):20s} {len(log.records):4d} "
                  f"{log.n_elements[-1]:7d} {log.etas[-1]:10.3e} {tail:7.4f} {c_stab:6.2f} "
                  f"{c_red:6.2f} {rate:7.3f} {fit:>4s} {dt:6.1f}{flag}")
            if args.out:
                write_run(log, f"{args.out}/{problem}_{strategy}_{theta}")


if __name__ == "__main__":
    main()
