"""Recover three wall materials of a shoebox room from synthetic soundings.

Traces random links, simulates "measured" MPCs with known materials, perturbs
the materials and calibrates them back from 32 snapshots.

    python3 demos/calibrate_shoebox.py [--rays 50000] [--iters 800]
"""
import argparse
import time

import numpy as np

from mmtwin.calibration import CalibrationConfig, calibrate, random_poses, simulate_snapshots
from mmtwin.geometry import scene_from_arrays, shoebox
from mmtwin.materials import MaterialEmbedding, Readout
from mmtwin.tracer import TraceConfig, trace_paths

REGIONS = ("floor", "ceiling", "walls")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=50_000)
    ap.add_argument("--iters", type=int, default=800)
    ap.add_argument("--snapshots", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    scene = scene_from_arrays(*shoebox())
    poses = random_poses(args.snapshots, [0.3] * 3, [5.7, 3.7, 2.7],
                         np.random.default_rng(args.seed))
    t0 = time.perf_counter()
    paths = [trace_paths(scene, tx, rx, TraceConfig(n_rays=args.rays)) for tx, rx in poses]
    print(f"traced {len(paths)} links in {time.perf_counter() - t0:.1f} s")

    ro = Readout.random(8, args.seed)
    sigma, eps, s = np.array([15.0, 8.0, 10.0]), np.array([5.24, 2.73, 3.9]), np.array([0.4, 0.3, 0.35])
    truth = MaterialEmbedding.from_params(sigma, eps, s, ro)
    snaps = simulate_snapshots(scene, truth, poses, 60.5e9, paths=paths)
    f = np.random.default_rng(args.seed + 1).choice([0.5, 1.5], (3, 3))
    init = MaterialEmbedding.from_params(sigma * f[0], 1 + (eps - 1) * f[1], s * f[2], ro)

    cfg = CalibrationConfig(max_iter=args.iters, lr=0.02, lr_schedule="cosine")
    t0 = time.perf_counter()
    res = calibrate(scene, init, snaps, cfg, paths=paths)
    print(f"{res.iterations} iterations in {time.perf_counter() - t0:.1f} s, "
          f"loss {res.history[0]:.3g} -> {res.history[-1]:.3g}")
    print(f"{'region':8s} {'param':6s} {'truth':>8s} {'start':>8s} {'fitted':>8s}")
    for k, name in enumerate(("sigma", "eps_r", "S")):
        for g, region in enumerate(REGIONS):
            t = (sigma, eps, s)[k][g]
            print(f"{region:8s} {name:6s} {t:8.3f} {res.params_before[k][g]:8.3f} "
                  f"{res.params_after[k][g]:8.3f}")


if __name__ == "__main__":
    main()
