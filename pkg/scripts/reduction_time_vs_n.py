"""Mean number of steps until a single channel remains, against n.

    python scripts/reduction_time_vs_n.py [--max-n 6] [--n-traj 5000]

Starts from the centroid.  Nothing is asserted; the numbers are data.
"""
import argparse

import numpy as np

from reduction_lab.reduction import SimplexPoint, WalkParams, run_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-n", type=int, default=6)
    ap.add_argument("--n-traj", type=int, default=5000)
    ap.add_argument("--sigma", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    print("n  mean_steps  std_err  mean_first_absorption")
    for n in range(2, args.max_n + 1):
        p0 = SimplexPoint.from_probs(np.full(n, 1.0 / n))
        b = run_batch(p0, WalkParams(args.sigma, seed=args.seed), args.n_traj, threads=args.threads)
        done = ~b.truncated
        steps = b.steps[done]
        first = b.absorbed_step[done, 0]
        print(f"{n:<2} {steps.mean():10.1f} {steps.std(ddof=1) / np.sqrt(len(steps)):8.1f} {first.mean():10.1f}")


if __name__ == "__main__":
    main()
