"""Gate argmax switches as the L1 smoothness weight grows.

Trains a fresh gate per weight on a fixed alternating-posterior batch.
"""

import argparse

from prism_irl import gating


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.5, 2.22, 5.0, 10.0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pattern", type=int, nargs="+", default=[0, 0, 0, 1])
    ap.add_argument("--epochs", type=int, default=300)
    args = ap.parse_args()

    batch = gating.alternating_posterior_batch(seed=args.seed, pattern=tuple(args.pattern))
    counts = gating.l1_switch_sweep(args.lambdas, batch, epochs=args.epochs, seed=args.seed)
    for lam, c in zip(args.lambdas, counts):
        print(f"lambda_l1 {lam:<6g} switches {c}")


if __name__ == "__main__":
    main()
