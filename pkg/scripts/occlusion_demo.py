"""Track a keypoint through a long occlusion on a tumbling object."""
import argparse

import numpy as np

from bimanual_safety.geometry import Pose, rotation_about
from bimanual_safety.keypoints import KeypointSet, TrackedKeypoint


def pose_at(t: int) -> Pose:
    axis = np.array([0.2, 0.6, -0.7])
    return Pose(rotation_about(axis / np.linalg.norm(axis), 0.05 * t), (0.4, 0.1 * np.sin(0.03 * t), 0.2))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=120)
    ap.add_argument("--occlude", type=int, nargs=2, default=(20, 70), metavar=("START", "END"))
    ap.add_argument("--noise", type=float, default=0.005, help="observation noise std (m)")
    ap.add_argument("--beta", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    offset = np.array([0.0, 0.0, 0.06])
    rng = np.random.default_rng(args.seed)
    kps = KeypointSet([TrackedKeypoint(1, "obj", beta=args.beta, smoothing=args.noise > 0)])
    lo, hi = args.occlude
    print(f"{'t':>4} {'source':<13} {'error (mm)':>10}")
    for t in range(args.steps):
        truth = pose_at(t).apply(offset)
        seen = {} if lo <= t <= hi else {1: truth + rng.normal(0, args.noise, 3)}
        xyz, source = kps.update({"obj": pose_at(t)}, seen)[1]
        if t % 10 == 0 or t in (lo, hi, hi + 1):
            print(f"{t:>4} {source:<13} {1e3 * np.linalg.norm(xyz - truth):10.3f}")


if __name__ == "__main__":
    main()
