"""Master-equation error against exact evolution as the coupling shrinks.

    python scripts/lambda_scaling.py [--t-end 22.4] [--dt 0.05]

Prints the trace distance at ``t-end`` for each coupling and the fitted
log-log slope.
"""
import argparse

import numpy as np

from reduction_lab.decoherence import integrate_master
from reduction_lab.hilbert import trace_distance, trace_env
from reduction_lab.models import PointerBathParams, build_pointer_bath, decoherence_time, reduced_series


def error_at(lam, t_end, dt, seed):
    sc = build_pointer_bath(PointerBathParams(lam=lam, seed=seed))
    ts = np.linspace(0.0, t_end, int(round(t_end / dt)) + 1)
    run = integrate_master(sc.K, sc.E, sc.C, trace_env(sc.rho0), sc.beta0, ts)
    return trace_distance(run.rhoK[-1], reduced_series(sc, [t_end])[0])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.1, 0.05, 0.025, 0.0125])
    ap.add_argument("--t-end", type=float, default=None, help="default: 1/e time of the largest coupling")
    ap.add_argument("--dt", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t_end = args.t_end
    if t_end is None:
        sc = build_pointer_bath(PointerBathParams(lam=max(args.lambdas), seed=args.seed))
        t_end = decoherence_time(sc, 200.0)
        print(f"decoherence time at lambda={max(args.lambdas)}: {t_end:.3f}")
    errs = [error_at(lam, t_end, args.dt, args.seed) for lam in args.lambdas]
    for lam, e in zip(args.lambdas, errs):
        print(f"lambda={lam:<8g} trace distance={e:.4e}")
    slope = np.polyfit(np.log(args.lambdas), np.log(errs), 1)[0]
    print(f"empirical order: {slope:.2f}")


if __name__ == "__main__":
    main()
