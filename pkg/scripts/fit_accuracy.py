"""Cylinder and sign fitting accuracy on random synthetic problems.

    python scripts/fit_accuracy.py --trials 100 --sigma 0.02
"""

import argparse
import math
import time

import numpy as np

from xdmap.mapping import ObservationSet, fit_cylinder, fit_landmark
from xdmap.synthetic import random_cylinder_problem, random_sign_problem


def cylinder_errors(trials: int, sigma: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        cyl, pts, o, d = random_cylinder_problem(rng, range_sigma=sigma)
        got, res = fit_cylinder(pts, o, d)
        axis = math.degrees(math.acos(min(1.0, abs(float(got.axis @ cyl.axis)))))
        out.append((abs(got.radius - cyl.radius), axis, res.iterations))
    return np.array(out)


def sign_confusion(per_family: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    table = {}
    for family in ("rectangle", "circle", "triangle"):
        for _ in range(per_family):
            _, dets, pts = random_sign_problem(rng, family)
            obs = ObservationSet(dets, [pts] + [np.zeros((0, 3))] * (len(dets) - 1))
            got = fit_landmark(obs).family
            table[family, got] = table.get((family, got), 0) + 1
    return table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--sigma", type=float, default=0.02, help="range noise in meters")
    ap.add_argument("--signs", type=int, default=20, help="sign problems per family")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    err = cylinder_errors(args.trials, args.sigma, args.seed)
    dt = time.perf_counter() - t0
    print(f"cylinders: {args.trials} fits, sigma {args.sigma} m, {dt:.1f} s")
    for q in (50, 95, 100):
        r, a, it = np.percentile(err, q, axis=0)
        print(f"  p{q:<3d} radius {100 * r:7.3f} cm  axis {a:6.3f} deg  iterations {it:5.1f}")

    table = sign_confusion(args.signs, args.seed + 1)
    correct = sum(n for (want, got), n in table.items() if want == got)
    print(f"signs: {correct}/{3 * args.signs} families correct")
    for (want, got), n in sorted(table.items()):
        if want != got:
            print(f"  {want} -> {got}: {n}")


if __name__ == "__main__":
    main()
