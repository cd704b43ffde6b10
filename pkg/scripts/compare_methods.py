"""Map-based labels against the single-shot baselines over several seeds.

    python scripts/compare_methods.py --seeds 1,2,3
    python scripts/compare_methods.py --seeds 1 --no-motion-compensation --tau 30

Scenes use 2 cm range noise, 2 cm / 0.1 deg pose noise and 1 px mask jitter
unless overridden. Tables are in percent; 3D rows score points.
"""

import argparse
import math
import time

from xdmap.config import PipelineConfig
from xdmap.metrics import REPORT_COLUMNS, format_table
from xdmap.pipeline import MethodScores, evaluate_sequence, simulate_from_config
from xdmap.synthetic import NoiseSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--tau", type=float, default=50.0)
    ap.add_argument("--sampling-hz", type=float, default=10.0)
    ap.add_argument("--no-motion-compensation", action="store_true")
    ap.add_argument("--range-sigma", type=float, default=0.02)
    ap.add_argument("--pose-sigma", type=float, default=0.02, help="translation sigma in meters")
    ap.add_argument("--rot-sigma-deg", type=float, default=0.1)
    ap.add_argument("--mask-jitter", type=float, default=1.0, help="pixels")
    args = ap.parse_args()

    noise = NoiseSpec(args.range_sigma, args.pose_sigma, math.radians(args.rot_sigma_deg), args.mask_jitter, 0.0)
    totals = {}
    for seed in (int(s) for s in args.seeds.split(",") if s):
        t0 = time.perf_counter()
        cfg = PipelineConfig(seed=seed, noise=noise, range_threshold=args.tau, sampling_hz=args.sampling_hz,
                             motion_compensation=not args.no_motion_compensation)
        ev = evaluate_sequence(simulate_from_config(cfg), cfg)
        for name, s in ev.scores.items():
            totals[name] = totals.get(name, MethodScores()).merge(s)
        print(f"seed {seed}: {len(ev.map.landmarks)} landmarks, {len(ev.frames)} frames, "
              f"{time.perf_counter() - t0:.1f} s")

    rows2 = {name: s.rows()[0] for name, s in totals.items()}
    rows3 = {name: s.rows()[1] | {"recall": s.recall3d, "precision": s.precision3d}
             for name, s in totals.items()}
    print("\n2D\n" + format_table(rows2))
    print("\n3D\n" + format_table(rows3, list(REPORT_COLUMNS[:4]) + ["recall", "precision"]))


if __name__ == "__main__":
    main()
