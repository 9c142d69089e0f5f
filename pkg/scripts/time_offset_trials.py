"""Stream truncation study: merged robot/camera streams with and without an offset.

    python3 scripts/time_offset_trials.py --trials 10 --offset 0.05
"""

import argparse

import numpy as np

from ganhec.baselines import solve_moment_matching
from ganhec.calibrator import GanConfig, calibrate
from ganhec.datagen import StreamConfig, generate_streams, merge_pairs, simulate_time_offset
from ganhec.se3 import rotation_error, translation_error


def errors(est, truth, d):
    return np.degrees(rotation_error(est.r, truth.r)), translation_error(est, truth) / d


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--offset", type=float, default=0.05)
    ap.add_argument("--d", type=float, default=125.31)
    args = ap.parse_args()

    table = {(m, off): [] for m in ("gan", "moment") for off in (0.0, args.offset)}
    for trial in range(args.trials):
        robot, cam, x = generate_streams(StreamConfig(d=args.d, seed=trial))
        for off in (0.0, args.offset):
            a, b = (merge_pairs(s) for s in simulate_time_offset(robot, cam, off))
            gan = errors(calibrate(a, b, GanConfig(seed=trial)).x_est, x, args.d)
            mm = errors(solve_moment_matching(a, b), x, args.d)
            table["gan", off].append(gan)
            table["moment", off].append(mm)
            print(f"trial {trial} offset {off}: gan {gan[0]:.3f} deg {gan[1]:.4f} d | "
                  f"moment {mm[0]:.3f} deg {mm[1]:.4f} d", flush=True)

    for method in ("gan", "moment"):
        base = np.median(table[method, 0.0], axis=0)
        shifted = np.median(table[method, args.offset], axis=0)
        print(f"{method}: median rot {base[0]:.3f} -> {shifted[0]:.3f} deg, "
              f"trans {base[1]:.4f} -> {shifted[1]:.4f} d")


if __name__ == "__main__":
    main()
