"""Full solver vs. no-collision and w_inter = 0 variants on the bundled fixtures.

    python3 scripts/ablation.py [--fixtures handshake hug]
"""

import argparse
import time

from dualretarget.fixtures import load_fixture
from dualretarget.mesh import MeshConfig, extract_priors
from dualretarget.metrics import retarget_report
from dualretarget.robot import load_robot_spec
from dualretarget.solver import SolverConfig, retarget_clip

VARIANTS = {"full": {}, "no_collisions": {"collisions": False}, "w_inter=0": {"w_inter": 0.0}}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--fixtures", nargs="+", default=["handshake", "hug"])
    args = ap.parse_args()
    spec = load_robot_spec()
    print(f"{'clip':<10} {'variant':<14} {'IPR %':>7} {'MPD cm':>7} {'IEE %':>7} {'F1s':>6} {'F1l':>6} {'sec':>6}")
    for name in args.fixtures:
        clip = load_fixture(name)
        for variant, overrides in VARIANTS.items():
            t0 = time.perf_counter()
            traj, ref = retarget_clip(clip, (spec, spec), SolverConfig(**overrides))
            secs = time.perf_counter() - t0
            rep = retarget_report(traj, (spec, spec), ref, extract_priors(ref, MeshConfig()), spec.height)
            print(f"{name:<10} {variant:<14} {rep.ipr:7.2f} {rep.mpd:7.2f} {rep.iee:7.2f} "
                  f"{rep.f1_strict:6.3f} {rep.f1_loose:6.3f} {secs:6.1f}")


if __name__ == "__main__":
    main()
