"""Command-line front end: ingest, trace, predict, calibrate, dynamics, beamsweep, report.

Every run writes ``manifest.json`` (command, resolved config, input digests,
seed, version, output digests) next to its outputs. Wall-clock timings go to
``timings.json`` so the manifest itself is reproducible byte for byte. On a
failure the run writes ``error.json`` and exits non-zero.
"""
import argparse
import csv
import hashlib
import json
import os
import sys
import time
import traceback

from . import __version__

DEFAULT_FREQ = 60.5e9
POSE_COLUMNS = ["snapshot", "tx_x", "tx_y", "tx_z", "rx_x", "rx_y", "rx_z", "freq_hz"]

EXIT_ERROR = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def sha256_of(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- config ---------------------------------------------------------------------------
def load_config(path, overrides):
    """YAML config with ``section.key=value`` overrides (values parsed as YAML)."""
    import yaml
    cfg = {}
    if path:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
        if not isinstance(cfg, dict):
            raise UsageError(f"{path}: config must be a mapping")
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(value)
    return cfg


def _section(cfg, name, cls, **fixed):
    kw = dict(cfg.get(name) or {})
    kw.update(fixed)
    for k, v in kw.items():
        if isinstance(v, list):
            kw[k] = tuple(v)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise UsageError(f"config section {name!r}: {exc}") from exc


# -- inputs ---------------------------------------------------------------------------
def read_poses(path):
    import numpy as np
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            tx = np.array([float(r["tx_x"]), float(r["tx_y"]), float(r["tx_z"])])
            rx = np.array([float(r["rx_x"]), float(r["rx_y"]), float(r["rx_z"])])
            f = float(r["freq_hz"]) if r.get("freq_hz") else DEFAULT_FREQ
            out.append((r["snapshot"], tx, rx, f))
    return out


def write_poses(path, poses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSE_COLUMNS)
        for ident, tx, rx, f in poses:
            w.writerow([ident] + [repr(float(x)) for x in (*tx, *rx)] + [repr(float(f))])


def load_scene(path, run=None):
    """Mesh plus its companion ``.regions`` file, both recorded as inputs."""
    from .geometry import load_mesh
    if not path:
        raise UsageError("--scene is required")
    if run is not None:
        run.input(path)
        companion = os.path.splitext(path)[0] + ".regions"
        if os.path.isfile(companion):
            run.input(companion)
    return load_mesh(path)


def load_materials(path, scene, seed):
    """Region materials from an embedding YAML, a material DB YAML or a parameter CSV.

    A database is applied by matching region labels; unknown labels fall back to
    concrete.
    """
    import numpy as np
    import yaml
    from .materials import MaterialEmbedding, MaterialNotFound, Readout, load_material_db
    from .semantics import load_assignment
    K = scene.n_regions
    if path and path.endswith(".csv"):
        with open(path, newline="") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda r: int(r["region"]))
        pick = (lambda r, k: r.get(k + "_after") or r[k])
        sig = np.array([float(pick(r, "sigma")) for r in rows])
        eps = np.array([float(pick(r, "eps_r")) for r in rows])
        s = np.array([float(pick(r, "s")) for r in rows])
        return MaterialEmbedding.from_params(sig, eps, s, Readout.random(seed=seed),
                                             [r.get("label", "") for r in rows])
    if path:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        if isinstance(doc, dict) and "regions" in doc:
            emb = load_assignment(path)
            if emb.n_regions < K:
                raise UsageError(f"{path}: {emb.n_regions} regions, scene has {K}")
            return emb
    db = load_material_db(path)
    mats = []
    for lab in scene.region_labels[:K]:
        try:
            mats.append(db.lookup(lab))
        except MaterialNotFound:
            mats.append(db.lookup("concrete"))
    return MaterialEmbedding.from_materials(mats, Readout.random(seed=seed))


def _need(args, name):
    v = getattr(args, name)
    if not v:
        raise UsageError(f"--{name.replace('_', '-')} is required for {args.command}")
    return v


# -- commands -------------------------------------------------------------------------
def cmd_ingest(args, cfg, run):
    from .geometry import save_mesh
    from .materials import Readout, load_material_db
    from .semantics import (assign_regions, read_semantic_export, read_text_embeddings,
                            save_assignment)
    scene = load_scene(args.scene, run)
    points = read_semantic_export(run.input(_need(args, "semantics")))
    text = read_text_embeddings(run.input(_need(args, "text_embeddings")))
    db = load_material_db(run.input(args.materials) if args.materials else None)
    a = assign_regions(scene, points, text, db, readout=Readout.random(seed=args.seed),
                       **(cfg.get("ingest") or {}))
    save_mesh(run.output("scene.ply"), scene.vertices, scene.triangles, scene.base_regions)
    save_assignment(run.output("materials.yaml"), a, readout_seed=args.seed)
    with open(run.output("regions.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "label", "n_points", "fallback"])
        for k, lab in enumerate(a.labels):
            w.writerow([k, lab, int(a.n_points[k]), int(k in a.fallback)])


def _trace_config(args, cfg):
    from .tracer import TraceConfig
    tc = _section(cfg, "trace", TraceConfig)
    return tc.replace(rng_seed=args.seed)


def _trace_all(args, cfg, run):
    from .tracer import trace_paths
    scene = load_scene(args.scene, run)
    poses = read_poses(run.input(_need(args, "snapshots")))
    if not poses:
        raise UsageError("no snapshots in " + args.snapshots)
    tc = _trace_config(args, cfg)
    return scene, poses, [trace_paths(scene, tx, rx, tc) for _, tx, rx, _ in poses]


def _write_mpcs(path, ids, mpc_sets):
    from .channel import write_mpc_csv
    flat, col = [], []
    for i, ms in zip(ids, mpc_sets):
        flat.extend(ms)
        col.extend([i] * len(ms))
    write_mpc_csv(path, flat, extra=[("snapshot", col)])


def cmd_trace(args, cfg, run):
    from .channel import synthesize
    from .tracer import write_paths
    scene, poses, results = _trace_all(args, cfg, run)
    emb = load_materials(run.input(args.materials), scene, args.seed)
    with open(run.output("paths.txt"), "w") as fh:
        for (ident, *_), res in zip(poses, results):
            fh.write(f"# snapshot {ident}\n")
            write_paths(fh, res)
    mpcs = [synthesize(res, emb, f)[0] for (_, _, _, f), res in zip(poses, results)]
    _write_mpcs(run.output("mpcs.csv"), [p[0] for p in poses], mpcs)


def cmd_predict(args, cfg, run):
    from .channel import synthesize
    from .metrics import los_index_of, snapshot_metrics, write_metrics_csv
    scene, poses, results = _trace_all(args, cfg, run)
    emb = load_materials(run.input(args.materials), scene, args.seed)
    mpcs = [synthesize(res, emb, f)[0] for (_, _, _, f), res in zip(poses, results)]
    ids = [p[0] for p in poses]
    _write_mpcs(run.output("mpcs.csv"), ids, mpcs)
    write_poses(run.output("poses.csv"), poses)
    write_metrics_csv(run.output("metrics.csv"), ids,
                      [snapshot_metrics(m, los_index_of(m)) for m in mpcs])


def cmd_calibrate(args, cfg, run):
    from .calibration import (CalibrationConfig, Snapshot, calibrate, write_history_csv,
                              write_param_table)
    from .channel import read_mpc_csv
    from .metrics import los_index_of
    from .semantics import save_embedding
    src = args.snapshots
    if not src or src.strip().isdigit() or not os.path.isfile(src):
        raise UsageError("calibrate needs --snapshots POSES.csv with at least one snapshot")
    poses = read_poses(run.input(src))
    if args.max_snapshots is not None:
        if args.max_snapshots < 1:
            raise UsageError("--max-snapshots must be at least 1")
        poses = poses[:args.max_snapshots]
    if not poses:
        raise UsageError("calibrate needs at least one snapshot")
    meas = read_mpc_csv(run.input(_need(args, "mpcs")), group_by="snapshot")
    missing = [p[0] for p in poses if p[0] not in meas]
    if missing:
        raise UsageError(f"no measured MPCs for snapshots {missing[:5]}")
    snaps = [Snapshot(tx, rx, f, meas[i], los_index_of(meas[i]), i) for i, tx, rx, f in poses]
    scene = load_scene(args.scene, run)
    emb = load_materials(run.input(args.materials), scene, args.seed)
    cc = _section(cfg, "calibration", CalibrationConfig, seed=args.seed)
    if args.batch is not None:
        cc = _section({"calibration": {**(cfg.get("calibration") or {}),
                                       "batch_size": args.batch}},
                      "calibration", CalibrationConfig, seed=args.seed)
    res = calibrate(scene, emb, snaps, cc, _trace_config(args, cfg))
    save_embedding(run.output("materials.yaml"), res.embedding, readout_seed=args.seed)
    write_history_csv(run.output("loss_history.csv"), res.history)
    write_param_table(run.output("params.csv"), res.embedding.labels, res.params_before,
                      res.params_after)
    run.extra["iterations"] = int(res.iterations)
    run.extra["converged"] = bool(res.converged)
    run.extra["final_loss"] = float(res.history[-1])
    run.extra["scale"] = float(res.scale.scale)


def cmd_dynamics(args, cfg, run):
    import numpy as np
    from . import dynamics as dy
    from .materials import load_material_db
    scene = load_scene(args.scene, run)
    poses = read_poses(run.input(_need(args, "snapshots")))
    times, traj = dy.read_trajectory(run.input(_need(args, "trajectory")))
    emb = load_materials(run.input(args.materials), scene, args.seed)
    db = load_material_db()
    body = _section(cfg, "proxy", dy.ProxyObject,
                    **{k: v for k, v in (("shape", args.proxy), ("radius", args.radius),
                                         ("height", args.height)) if v is not None})
    freq = poses[0][3]
    links = {i: (tx, rx) for i, tx, rx, _ in poses}
    steps, mism = dy.sweep(scene, body, times, traj, links, emb.params(),
                           db.lookup(body.material), freq, _trace_config(args, cfg),
                           check_full=args.check_full)
    dy.write_shadow_csv(run.output("shadow_loss.csv"), steps)
    if args.check_full:
        run.extra["full_retrace_mismatches"] = len(mism)
        if mism:
            raise RuntimeError(f"incremental retrace differs from full retrace at {mism[:5]}")
    peak = {k: float(np.max([s.shadow_loss_db for s in v])) for k, v in steps.items()}
    run.extra["peak_shadow_loss_db"] = peak


def cmd_beamsweep(args, cfg, run):
    from .beamsel import load_codebook, load_link_budget, select_beam, write_selection_csv
    from .channel import read_mpc_csv
    sets = read_mpc_csv(run.input(_need(args, "mpcs")), group_by="snapshot")
    cb = load_codebook(run.input(args.codebook) if args.codebook else None)
    budget = load_link_budget(run.input(args.mcs) if args.mcs else None,
                              **(cfg.get("link") or {}))
    ids = list(sets)
    choices = [select_beam(sets[i], cb, budget, coherent=not args.power_sum) for i in ids]
    write_selection_csv(run.output("selection.csv"), ids, choices, cb)


REPORT_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)


def cmd_report(args, cfg, run):
    import numpy as np
    from .channel import read_mpc_csv
    from .metrics import los_index_of, snapshot_metrics, write_metrics_csv
    pred = read_mpc_csv(run.input(_need(args, "pred")), group_by="snapshot")
    meas = read_mpc_csv(run.input(_need(args, "meas")), group_by="snapshot")
    ids = [i for i in meas if i in pred]
    if not ids:
        raise UsageError("prediction and measurement share no snapshot ids")
    mp = [snapshot_metrics(pred[i], los_index_of(pred[i])) for i in ids]
    mm = [snapshot_metrics(meas[i], los_index_of(meas[i])) for i in ids]
    write_metrics_csv(run.output("metrics_pred.csv"), ids, mp)
    write_metrics_csv(run.output("metrics_meas.csv"), ids, mm)
    err = {
        "pathloss_db": [a.pathloss_db - b.pathloss_db for a, b in zip(mp, mm)],
        "rms_delay_spread_ns": [(a.rms_delay_spread - b.rms_delay_spread) * 1e9
                                for a, b in zip(mp, mm)],
        "angular_spread_deg": [a.angular_spread_deg - b.angular_spread_deg
                               for a, b in zip(mp, mm)],
    }
    with open(run.output("errors.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["snapshot"] + list(err))
        for k, i in enumerate(ids):
            w.writerow([i] + [repr(float(v[k])) for v in err.values()])
    with open(run.output("error_cdf.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "n"] + [f"q{int(q * 100):02d}" for q in REPORT_QUANTILES])
        for name, v in err.items():
            a = np.abs(np.array(v, float))
            w.writerow([name, len(a)] + [repr(float(x)) for x in np.quantile(a, REPORT_QUANTILES)])


COMMANDS = {
    "ingest": (cmd_ingest, "mesh + semantic export + material DB -> assigned scene bundle"),
    "trace": (cmd_trace, "scene + poses -> path and MPC dump"),
    "predict": (cmd_predict, "scene + poses -> predicted MPCs and snapshot metrics"),
    "calibrate": (cmd_calibrate, "scene + measured snapshots -> calibrated materials"),
    "dynamics": (cmd_dynamics, "scene + links + trajectory -> shadow-loss trace"),
    "beamsweep": (cmd_beamsweep, "MPC snapshots + codebook -> beam selection"),
    "report": (cmd_report, "predicted vs measured MPCs -> error tables"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--scene", help="scene mesh (PLY with a per-face region property)")
    g.add_argument("--materials", help="embedding YAML, material database YAML or parameter CSV")
    g.add_argument("--semantics", help="semantic point export (binary or JSONL)")
    g.add_argument("--snapshots", help="pose CSV: snapshot, tx_x..rx_z, freq_hz")
    g.add_argument("--config", help="YAML config with trace/calibration/proxy/link sections")
    g.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config entry (repeatable)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=None, help="worker threads for compiled kernels")
    g.add_argument("--out-dir", default=".", help="output directory (created if missing)")

    p = argparse.ArgumentParser(prog="mmtwin", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sp = {name: sub.add_parser(name, parents=[common], help=h) for name, (_, h) in COMMANDS.items()}
    sp["ingest"].add_argument("--text-embeddings", help="material text embedding file")
    sp["calibrate"].add_argument("--mpcs", help="measured MPC CSV with a snapshot column")
    sp["calibrate"].add_argument("--max-snapshots", type=int, default=None)
    sp["calibrate"].add_argument("--batch", type=int, default=None, help="mini-batch size")
    sp["dynamics"].add_argument("--trajectory", help="CSV with t_s, x, y, z, yaw (deg)")
    sp["dynamics"].add_argument("--proxy", choices=["cylinder", "box"], default=None)
    sp["dynamics"].add_argument("--radius", type=float, default=None)
    sp["dynamics"].add_argument("--height", type=float, default=None)
    sp["dynamics"].add_argument("--check-full", action="store_true",
                                help="also run full retraces and fail on any difference")
    sp["beamsweep"].add_argument("--mpcs", help="MPC CSV with a snapshot column")
    sp["beamsweep"].add_argument("--codebook", help="codebook YAML (default: 8 sectored beams)")
    sp["beamsweep"].add_argument("--mcs", help="MCS/link budget YAML (default: 802.11ad SC)")
    sp["beamsweep"].add_argument("--power-sum", action="store_true",
                                 help="combine MPC powers instead of complex amplitudes")
    sp["report"].add_argument("--pred", help="predicted MPC CSV")
    sp["report"].add_argument("--meas", help="measured MPC CSV")
    return p


class Run:
    """Tracks inputs and outputs of one command for the manifest."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.inputs = {}
        self.outputs = []
        self.extra = {}

    def input(self, path):
        if path:
            if not os.path.isfile(path):
                raise FileNotFoundError(path)
            self.inputs[path] = sha256_of(path)
        return path

    def output(self, name):
        self.outputs.append(name)
        return os.path.join(self.out_dir, name)


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be at least 1")
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(n)
        return
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _dump(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    os.makedirs(args.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    run = Run(args.out_dir)
    try:
        _set_threads(args.threads)
        cfg = load_config(run.input(args.config), args.set)
        COMMANDS[args.command][0](args, cfg, run)
    except UsageError as exc:
        _dump(os.path.join(args.out_dir, "error.json"),
              {"command": args.command, "type": "UsageError", "message": str(exc)})
        parser.error(str(exc))
    except Exception as exc:
        _dump(os.path.join(args.out_dir, "error.json"),
              {"command": args.command, "type": type(exc).__name__, "message": str(exc),
               "traceback": traceback.format_exc().splitlines()[-6:]})
        print(f"mmtwin {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    flags = {k: v for k, v in vars(args).items() if k not in ("threads", "out_dir")}
    manifest = {
        "command": args.command,
        "version": __version__,
        "seed": args.seed,
        "flags": flags,
        "config": cfg,
        "inputs": dict(sorted(run.inputs.items())),
        "outputs": {n: sha256_of(os.path.join(args.out_dir, n)) for n in sorted(run.outputs)},
        "results": run.extra,
    }
    _dump(os.path.join(args.out_dir, "manifest.json"), manifest)
    _dump(os.path.join(args.out_dir, "timings.json"),
          {"wall_s": time.perf_counter() - t0, "threads": args.threads})
    return 0


if __name__ == "__main__":
    sys.exit(main())
