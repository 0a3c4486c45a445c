"""Replication-mean ptFCE estimate as the noise scale grows."""

import argparse

from taskfc.harness import default_workers, noise_sweep


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=100)
    parser.add_argument("--lambdas", type=float, nargs="+", default=[0.5, 1.0, 2.0, 3.0, 5.0])
    parser.add_argument("--rho", type=float, default=0.75)
    parser.add_argument("--n", type=int, default=308)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--workers", type=int, default=default_workers())
    args = parser.parse_args()
    rows = noise_sweep(args.lambdas, rho=args.rho, n=args.n, reps=args.reps, seed=args.seed, workers=args.workers)
    print("lambda,mean,sd")
    for r in rows:
        print(f"{r['lambda']},{r['mean']:.3f},{r['sd']:.3f}")


if __name__ == "__main__":
    main()
