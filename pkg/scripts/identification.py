"""Identification rates of the strong edge for every method under mechanisms 1 and 2."""

import argparse

from taskfc.harness import ALL_METHODS, default_workers, identification_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--ns", type=int, nargs="+", default=[50, 308])
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--workers", type=int, default=default_workers())
    args = parser.parse_args()
    print("mechanism,n,method,rate,half_width,failures")
    for mechanism in ("m1", "m2"):
        for n in args.ns:
            rep = identification_experiment(mechanism, n, args.reps, methods=ALL_METHODS, seed=args.seed,
                                            workers=args.workers)
            for method, r in rep.rates.items():
                print(f"{mechanism},{n},{method},{r.rate:.3f},{r.half_width:.3f},{r.failures}")


if __name__ == "__main__":
    main()
