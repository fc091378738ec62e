"""Adaptive versus uniform refinement for -lap u = 1 on the L-shape."""
import argparse

from estconv.driver import RunConfig, estimate_rate, run_adaptive
from estconv.marking import MarkingConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--adaptive-cap", type=int, default=50_000)
    ap.add_argument("--uniform-cap", type=int, default=1_000_000)
    ap.add_argument("--window", type=int, default=8)
    args = ap.parse_args()

    runs = {
        "adaptive": RunConfig(marking=MarkingConfig("maximum", 0.5), max_elements=args.adaptive_cap),
        # maximum marking with theta = 1 bisects every element once per level
        "uniform": RunConfig(marking=MarkingConfig("maximum", 1.0), max_elements=args.uniform_cap),
    }
    for name, cfg in runs.items():
        log = run_adaptive(cfg)
        print(f"# {name}")
        for n, eta in zip(log.n_elements, log.etas):
            print(f"{n:9d} {eta:.6e}")
        print(f"slope over last {args.window} levels: {estimate_rate(log, args.window):.4f}\n")


if __name__ == "__main__":
    main()
