"""Mean, spread and relative bias of the ptFCE estimate under mechanism 0."""

import argparse

from taskfc.harness import bias_experiment, default_workers


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--rhos", type=float, nargs="+", default=[0.25, 0.5, 0.75])
    parser.add_argument("--ns", type=int, nargs="+", default=[50, 308, 1000])
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--workers", type=int, default=default_workers())
    args = parser.parse_args()
    rows = bias_experiment(args.rhos, args.ns, args.reps, seed=args.seed, workers=args.workers)
    print("rho,n,mean,sd,relative_bias")
    for r in rows:
        print(f"{r['rho']},{r['n']},{r['mean']:.3f},{r['sd']:.3f},{r['relative_bias']:+.3f}")


if __name__ == "__main__":
    main()
