"""Command-line front end.

Subcommands: synth, flow-events, flow-frames, fuse-run, sweep-thresholds,
sweep-rate, eval-aee, viz. Options resolve as flag > config file > default;
config files are plain "key=value" lines ('#' comments), and every run writes
a manifest of the fully resolved configuration that reproduces it.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import os
import sys

import numpy as np

from . import io_formats
from .core import Events, GridShape, aee, flow_to_color
from .farneback import FarnebackParams, farneback_flow
from .fusion import FusionParams
from .harness import (RunConfig, compute_event_flows, rate_sweep, run_pipeline,
                      threshold_sweep, write_metrics_csv)
from .io_formats import FormatError
from .leaky import LeakyParams
from .synth import DvsParams, SceneConfig, dvs_simulate, frame_sequence, gt_flow


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# name -> (parser, default); None default means required where used
SCHEMA = {
    # scene
    "scene": (str, "translating_texture"),
    "width": (int, 128),
    "height": (int, 128),
    "seed": (int, 0),
    "frame_rate_hz": (float, 10.0),
    "duration_s": (float, 1.0),
    "vx": (float, 50.0),
    "vy": (float, 0.0),
    "fg_vx": (float, 400.0),
    "fg_vy": (float, 0.0),
    "fg_size": (int, 32),
    "substeps": (int, 20),
    # dvs
    "contrast": (float, 0.2),
    "refractory_us": (float, 500.0),
    "log_eps": (float, 1e-3),
    # leaky filter
    "tau_us": (float, 30000.0),
    "smooth_k": (int, 5),
    "act_threshold": (float, 0.1),
    "gain": (float, 25.0),
    # farneback
    "pyramid_levels": (int, 3),
    "pyr_scale": (float, 0.5),
    "poly_n": (int, 7),
    "poly_sigma": (float, 1.5),
    "avg_window": (int, 15),
    "iterations": (int, 3),
    "det_eps": (float, 1e-12),
    # fusion
    "thresh_farneback": (float, 2.0),
    "thresh_leakycnn": (float, 4.0),
    "thresh_confidence": (float, 1.0),
    "rho": (float, 0.0),
    "single_accumulator": (int, 0),
    # run
    "rate_multiplier": (int, 1),
    "eval_mode": (str, "all_gt_pixels"),
    "jobs": (int, 1),
    "n_slices": (int, 4),
    "tf_grid": (str, "0.5,1,2,4,8"),
    "te_grid": (str, "0.5,1,2,4,8"),
    "n_grid": (str, "1,2,4,8"),
    "max_mag": (float, 5.0),
    "ppm": (int, 0),
    # paths
    "events": (str, ""),
    "frames_index": (str, ""),
    "gt_index": (str, ""),
    "out": (str, "out"),
}


def _parse_config_file(path):
    values = {}
    try:
        f = open(path)
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e
    with f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            typ, _ = SCHEMA[key]
            try:
                values[key] = typ(raw)
            except ValueError as e:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return values


def _resolve(args):
    """defaults < config file < explicit command-line flags."""
    cfg = {k: d for k, (_, d) in SCHEMA.items()}
    if getattr(args, "config", None):
        cfg.update(_parse_config_file(args.config))
    for key in SCHEMA:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _write_manifest(path, cfg):
    with open(path, "w") as f:
        for key in sorted(SCHEMA):
            f.write(f"{key}={cfg[key]}\n")


def _scene_from_cfg(cfg):
    return SceneConfig(shape=GridShape(cfg["width"], cfg["height"]),
                       kind=cfg["scene"],
                       velocity=(cfg["vx"], cfg["vy"]),
                       fg_velocity=(cfg["fg_vx"], cfg["fg_vy"]),
                       fg_size=cfg["fg_size"], seed=cfg["seed"],
                       frame_rate_hz=cfg["frame_rate_hz"],
                       duration_s=cfg["duration_s"],
                       sim_substeps=cfg["substeps"])


def _run_config_from_cfg(cfg):
    return RunConfig(
        leaky=LeakyParams(cfg["tau_us"], cfg["smooth_k"], cfg["act_threshold"],
                          cfg["gain"]),
        farneback=FarnebackParams(cfg["pyramid_levels"], cfg["pyr_scale"],
                                  cfg["poly_n"], cfg["poly_sigma"],
                                  cfg["avg_window"], cfg["iterations"],
                                  cfg["det_eps"]),
        fusion=FusionParams(cfg["thresh_farneback"], cfg["thresh_leakycnn"],
                            cfg["thresh_confidence"], cfg["rho"],
                            bool(cfg["single_accumulator"])),
        rate_multiplier=cfg["rate_multiplier"],
        eval_mode=cfg["eval_mode"])


def _need_path(cfg, key):
    path = cfg[key]
    if not path:
        raise UsageError(f"missing required option --{key.replace('_', '-')}")
    if not os.path.exists(path):
        raise DataError(f"{key} path does not exist: {path}")
    return path


def _load_frames(cfg):
    index = _need_path(cfg, "frames_index")
    return io_formats.read_frames(os.path.dirname(index) or ".", index)


def _load_events(cfg):
    return io_formats.read_events(_need_path(cfg, "events"), fmt="bin")


def _gt_lookup_from_index(cfg, tolerance_us):
    index = _need_path(cfg, "gt_index")
    gdir = os.path.dirname(index) or "."
    times, paths = [], []
    with open(index) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{index}:{lineno}: expected 'timestamp_us filename'")
            times.append(int(parts[0]))
            paths.append(os.path.join(gdir, parts[1]))
    if not times:
        raise DataError(f"{index}: no ground-truth entries")
    times = np.array(times, np.int64)
    cache = {}

    def lookup(t_us):
        i = int(np.argmin(np.abs(times - t_us)))
        if abs(int(times[i]) - t_us) > tolerance_us:
            return None
        if i not in cache:
            cache[i] = io_formats.read_flo(paths[i])
        return cache[i]

    return lookup


def _write_flo_series(outdir, flows, times, prefix):
    os.makedirs(outdir, exist_ok=True)
    lines = []
    for i, (t, flow) in enumerate(zip(times, flows)):
        name = f"{prefix}_{i:06d}.flo"
        io_formats.write_flo(os.path.join(outdir, name), flow)
        lines.append(f"{int(t)} {name}\n")
    with open(os.path.join(outdir, "index.txt"), "w") as f:
        f.writelines(lines)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_synth(cfg):
    scene = _scene_from_cfg(cfg)
    dvs = DvsParams(cfg["contrast"], cfg["refractory_us"], cfg["log_eps"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)

    events = dvs_simulate(scene, dvs)
    io_formats.write_events(os.path.join(out, "events.evt1"), events, fmt="bin")
    frames = frame_sequence(scene)
    io_formats.write_frames(os.path.join(out, "frames"), frames)
    gt_dir = os.path.join(out, "gt")
    gts = [gt_flow(scene, t * 1e-6) for t in frames.times]
    _write_flo_series(gt_dir, gts, frames.times, "gt")
    _write_manifest(os.path.join(out, "manifest.txt"), cfg)
    print(f"wrote {len(events)} events, {len(frames)} frames, "
          f"{len(gts)} gt fields to {out}")
    return 0


def _cmd_flow_events(cfg):
    events = _load_events(cfg)
    leaky = LeakyParams(cfg["tau_us"], cfg["smooth_k"], cfg["act_threshold"],
                        cfg["gain"])
    if len(events) == 0:
        raise DataError("event stream is empty")
    t0, t1 = int(events.t[0]), int(events.t[-1]) + 1
    n = max(cfg["n_slices"], 1)
    dt_frame = int(round(1e6 / cfg["frame_rate_hz"]))
    from .leaky import ActivationState, event_flow
    state = ActivationState(events.shape, leaky.tau_us)
    bounds = np.linspace(t0, t1, n + 1)
    flows, mids = [], []
    for s in range(n):
        s0, s1 = int(round(bounds[s])), int(round(bounds[s + 1]))
        flows.append(event_flow(state, events.slice_time(s0, s1), s1, leaky, dt_frame))
        mids.append((s0 + s1) // 2)
    _write_flo_series(cfg["out"], flows, mids, "event_flow")
    _write_manifest(os.path.join(cfg["out"], "manifest.txt"), cfg)
    print(f"wrote {n} event-flow fields to {cfg['out']}")
    return 0


def _cmd_flow_frames(cfg):
    frames = _load_frames(cfg)
    params = _run_config_from_cfg(cfg).farneback
    flows = [farneback_flow(frames.frames[k], frames.frames[k + 1], params)
             for k in range(len(frames) - 1)]
    _write_flo_series(cfg["out"], flows, frames.times[1:], "frame_flow")
    _write_manifest(os.path.join(cfg["out"], "manifest.txt"), cfg)
    print(f"wrote {len(flows)} frame-flow fields to {cfg['out']}")
    return 0


def _cmd_fuse_run(cfg):
    frames = _load_frames(cfg)
    events = _load_events(cfg)
    config = _run_config_from_cfg(cfg)
    tol = frames.dt_us // 2 + 1
    gt_lookup = _gt_lookup_from_index(cfg, tol)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)

    fused_flows = []
    rows = run_pipeline(frames, events, gt_lookup, config,
                        jobs=max(cfg["jobs"], 1), collect_outputs=fused_flows)
    write_metrics_csv(os.path.join(out, "metrics.csv"), rows)
    _write_flo_series(os.path.join(out, "fused"), fused_flows,
                      [r.t_us for r in rows], "fused")
    if cfg["ppm"]:
        ppm_dir = os.path.join(out, "render")
        os.makedirs(ppm_dir, exist_ok=True)
        for i, flow in enumerate(fused_flows):
            io_formats.write_ppm(os.path.join(ppm_dir, f"fused_{i:06d}.ppm"),
                                 flow_to_color(flow, cfg["max_mag"]))
    _write_manifest(os.path.join(out, "manifest.txt"), cfg)
    print(f"wrote {len(rows)} metric rows to {out}/metrics.csv")
    return 0


def _parse_grid(text, typ=float):
    try:
        return [typ(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(f"bad grid {text!r}: {e}") from e


def _cmd_sweep_thresholds(cfg):
    frames = _load_frames(cfg)
    events = _load_events(cfg)
    config = _run_config_from_cfg(cfg)
    tol = frames.dt_us // 2 + 1
    gt_lookup = _gt_lookup_from_index(cfg, tol)
    table = threshold_sweep(frames, events, gt_lookup, config,
                            _parse_grid(cfg["tf_grid"]), _parse_grid(cfg["te_grid"]),
                            jobs=max(cfg["jobs"], 1))
    os.makedirs(cfg["out"], exist_ok=True)
    path = os.path.join(cfg["out"], "threshold_sweep.csv")
    with open(path, "w") as f:
        f.write("thresh_farneback,thresh_leakycnn,mean_event_percent,mean_aee\n")
        for tf, te, pct, err in table:
            f.write(f"{tf:.9g},{te:.9g},{pct:.9g},{err:.9g}\n")
    _write_manifest(os.path.join(cfg["out"], "manifest.txt"), cfg)
    print(f"wrote {len(table)} sweep rows to {path}")
    return 0


def _cmd_sweep_rate(cfg):
    frames = _load_frames(cfg)
    events = _load_events(cfg)
    config = _run_config_from_cfg(cfg)
    tol = frames.dt_us // 2 + 1
    gt_lookup = _gt_lookup_from_index(cfg, tol)
    table = rate_sweep(frames, events, gt_lookup, config,
                       _parse_grid(cfg["n_grid"], int), jobs=max(cfg["jobs"], 1))
    os.makedirs(cfg["out"], exist_ok=True)
    path = os.path.join(cfg["out"], "rate_sweep.csv")
    with open(path, "w") as f:
        f.write("rate_multiplier,mean_event_percent,mean_aee_fused,"
                "mean_aee_frame,mean_aee_fused_fg,mean_aee_frame_fg\n")
        for n, pct, err, err_frame, err_fg, err_frame_fg in table:
            f.write(f"{n},{pct:.9g},{err:.9g},{err_frame:.9g},"
                    f"{err_fg:.9g},{err_frame_fg:.9g}\n")
    _write_manifest(os.path.join(cfg["out"], "manifest.txt"), cfg)
    print(f"wrote {len(table)} sweep rows to {path}")
    return 0


def _cmd_eval_aee(args):
    for p in (args.flow, args.gt):
        if not os.path.exists(p):
            raise DataError(f"no such file: {p}")
    mean, _ = aee(io_formats.read_flo(args.flow), io_formats.read_flo(args.gt))
    print(f"{mean:.9g}")
    return 0


def _cmd_viz(args):
    if not os.path.exists(args.flow):
        raise DataError(f"no such file: {args.flow}")
    flow = io_formats.read_flo(args.flow)
    io_formats.write_ppm(args.out, flow_to_color(flow, args.max_mag))
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_schema_options(parser, keys):
    parser.add_argument("--config", help="key=value config file")
    for key in keys:
        typ, default = SCHEMA[key]
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ,
                            default=None, help=f"(default: {default})")


_SCENE_KEYS = ("scene", "width", "height", "seed", "frame_rate_hz", "duration_s",
               "vx", "vy", "fg_vx", "fg_vy", "fg_size", "substeps")
_DVS_KEYS = ("contrast", "refractory_us", "log_eps")
_LEAKY_KEYS = ("tau_us", "smooth_k", "act_threshold", "gain")
_FARNE_KEYS = ("pyramid_levels", "pyr_scale", "poly_n", "poly_sigma",
               "avg_window", "iterations", "det_eps")
_FUSION_KEYS = ("thresh_farneback", "thresh_leakycnn", "thresh_confidence",
                "rho", "single_accumulator")
_RUN_KEYS = ("rate_multiplier", "eval_mode", "jobs")
_PATH_KEYS = ("events", "frames_index", "gt_index", "out")


def build_parser():
    parser = _Parser(prog="flowfuse",
                     description="event/frame optical-flow fusion toolkit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="render a synthetic scene: events, frames, gt")
    _add_schema_options(p, _SCENE_KEYS + _DVS_KEYS + ("out",))

    p = sub.add_parser("flow-events", help="event-pipeline flow to .flo series")
    _add_schema_options(p, _LEAKY_KEYS + ("events", "n_slices", "frame_rate_hz", "out"))

    p = sub.add_parser("flow-frames", help="frame-pipeline flow to .flo series")
    _add_schema_options(p, _FARNE_KEYS + ("frames_index", "out"))

    p = sub.add_parser("fuse-run", help="full dual-rate fusion pipeline")
    _add_schema_options(p, _LEAKY_KEYS + _FARNE_KEYS + _FUSION_KEYS + _RUN_KEYS
                        + _PATH_KEYS + ("ppm", "max_mag"))

    p = sub.add_parser("sweep-thresholds", help="threshold grid sweep")
    _add_schema_options(p, _LEAKY_KEYS + _FARNE_KEYS + _FUSION_KEYS + _RUN_KEYS
                        + _PATH_KEYS + ("tf_grid", "te_grid"))

    p = sub.add_parser("sweep-rate", help="rate-multiplier sweep")
    _add_schema_options(p, _LEAKY_KEYS + _FARNE_KEYS + _FUSION_KEYS + _RUN_KEYS
                        + _PATH_KEYS + ("n_grid",))

    p = sub.add_parser("eval-aee", help="AEE between two .flo files")
    p.add_argument("flow")
    p.add_argument("gt")

    p = sub.add_parser("viz", help="render a .flo file to PPM")
    p.add_argument("flow")
    p.add_argument("out")
    p.add_argument("--max-mag", type=float, default=5.0)

    return parser


_COMMANDS = {
    "synth": _cmd_synth,
    "flow-events": _cmd_flow_events,
    "flow-frames": _cmd_flow_frames,
    "fuse-run": _cmd_fuse_run,
    "sweep-thresholds": _cmd_sweep_thresholds,
    "sweep-rate": _cmd_sweep_rate,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        if args.command == "eval-aee":
            return _cmd_eval_aee(args)
        if args.command == "viz":
            return _cmd_viz(args)
        return _COMMANDS[args.command](_resolve(args))
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, FormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
