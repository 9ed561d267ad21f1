"""Solve the velocity/position benchmark (two state dimensions).

One best response at the reference mesh costs tens of seconds and the
level sets hold ~8e6 nodes, so full tolerance schedules are long-haul
runs.  --max-iters defaults low deliberately: raise it (and expect hours)
for a converged equilibrium on a single core.
"""

import argparse
import sys
import time

from mfglat import Discretization, build_level_sets
from mfglat.examples import example2
from mfglat.fixedpoint import tolerance_schedule_run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--theta1", type=float, default=1.0)
    ap.add_argument("--theta2", type=float, default=0.0)
    ap.add_argument("--sigma", type=float, default=0.03)
    ap.add_argument("--n-t", type=int, default=30)
    ap.add_argument("--n-s", type=int, default=150)
    ap.add_argument("--epsilon", type=float, default=0.002)
    ap.add_argument("--deltas", default="0.1,0.01,0.001")
    ap.add_argument("--max-iters", type=int, default=40,
                    help="per-stage round cap (default 40: a bounded probe)")
    args = ap.parse_args(argv)

    prob = example2(args.theta1, args.theta2, args.sigma)
    disc = Discretization(n_t=args.n_t, n_s=args.n_s, horizon=1.0,
                          epsilon=args.epsilon)
    t0 = time.monotonic()
    level_sets = build_level_sets(prob, disc)
    sizes = level_sets.sizes()
    print(f"level sets built in {time.monotonic() - t0:.1f}s: "
          f"|S_0|={sizes[0]}, |S_{args.n_t}|={sizes[-1]}, "
          f"total={sum(sizes)}, radius={level_sets.bounding_radius:.4f}")

    deltas = tuple(float(d) for d in args.deltas.split(","))
    t0 = time.monotonic()
    rep = tolerance_schedule_run(prob, disc, level_sets, deltas=deltas,
                                 max_iters=args.max_iters)
    runtime = time.monotonic() - t0

    for s in rep.stages:
        print(f"delta={s.delta:<8g} rounds={s.iterations:<6d} "
              f"final_error={s.final_error:.3e}")
    print(f"converged={rep.converged}  best-response calls={rep.br_calls}  "
          f"saturation={rep.saturation_max:.3f}  wall={runtime:.1f}s")
    return 0 if rep.converged else 2


if __name__ == "__main__":
    sys.exit(main())
