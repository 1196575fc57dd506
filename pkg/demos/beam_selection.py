"""Pick receive beams from the twin and score them on the "measured" channel.

    python3 demos/beam_selection.py [--links 20]
"""
import argparse

import numpy as np

from mmtwin.beamsel import beam_throughput, load_codebook, load_link_budget, select_beam
from mmtwin.calibration import random_poses
from mmtwin.channel import synthesize
from mmtwin.geometry import scene_from_arrays, shoebox
from mmtwin.materials import load_material_db
from mmtwin.tracer import TraceConfig, trace_paths


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--links", type=int, default=20)
    args = ap.parse_args()

    db = load_material_db()
    mats = tuple(np.array(z) for z in zip(*[db.lookup(x).params()
                                            for x in ("concrete", "ceiling board", "brick")]))
    scene = scene_from_arrays(*shoebox())
    cb, budget = load_codebook(), load_link_budget()
    poses = random_poses(args.links, [0.3] * 3, [5.7, 3.7, 2.7], np.random.default_rng(5))
    print(f"{'link':>4s} {'twin beam':>9s} {'best beam':>9s} {'twin Mbps':>10s} {'best Mbps':>10s}")
    for i, (tx, rx) in enumerate(poses):
        meas, _ = synthesize(trace_paths(scene, tx, rx, TraceConfig(n_rays=100_000)), mats, 60.5e9)
        twin, _ = synthesize(trace_paths(scene, tx, rx, TraceConfig(n_rays=30_000, rng_seed=1)),
                             mats, 60.5e9)
        best = select_beam(meas, cb, budget)
        pick = select_beam(twin, cb, budget).beam
        print(f"{i:4d} {pick:9d} {best.beam:9d} {beam_throughput(meas, cb, budget, pick):10.1f} "
              f"{best.report.throughput_mbps:10.1f}")


if __name__ == "__main__":
    main()
