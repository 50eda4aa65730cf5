"""Command-line interface.

Subcommands: ``reconstruct``, ``synth``, ``eval``, ``noise-sweep`` and
``bone-sweep``. Exit status is 0 on success, 1 on invalid input or
configuration and 2 when the solver aborts.

``--config`` names a JSON file whose keys mirror the long flag names (with
underscores), plus optional ``solver`` and ``scene`` objects. Flags given on
the command line override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import io, pipeline, synth
from .evaluation import evaluate
from .exceptions import PipelineError, SfamError, SolverAbort
from .solver import SolverConfig

log = logging.getLogger("sfam")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2
SOLVER_KEYS = {f.name for f in fields(SolverConfig)} - {"beta", "K", "seed"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is reserved for solver aborts
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _levels(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common(p):
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--seed", type=int, help="seed for every random choice (default 0)")
    p.add_argument("--window", type=int, help="frames per window (default 200)")
    p.add_argument("--beta", type=float, help="weight of the bone-length prior (default 1.5)")
    p.add_argument("--rank", type=int, help="number of basis shapes K (default: from W)")
    p.add_argument("--out", help="output directory (default .)")
    p.add_argument("-v", "--verbose", action="store_true")


def _scene_flags(p):
    p.add_argument("--frames", type=int)
    p.add_argument("--amplitude", type=float, help="limb swing amplitude in radians")
    p.add_argument("--camera-sweep", type=float, help="total camera azimuth change in radians")
    p.add_argument("--camera-tilt", type=float)


def build_parser():
    parser = _Parser(prog="sfam", description="Articulated 3D reconstruction from 2D tracks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("reconstruct", help="reconstruct 3D joints from a tracks file")
    _common(p)
    p.add_argument("--tracks", help="CSV with header frame,joint,x,y")
    p.add_argument("--skeleton", help="JSON skeleton with initial bone lengths")
    p.add_argument("--ground-truth", help="optional CSV with header frame,joint,x,y,z")

    p = sub.add_parser("synth", help="write a synthetic scene (tracks, truth, skeleton)")
    _common(p)
    _scene_flags(p)
    p.add_argument("--noise", type=float, help="2D noise as a fraction of the image extent")

    p = sub.add_parser("eval", help="score a reconstruction against ground truth")
    _common(p)
    p.add_argument("--estimate", help="reconstructed CSV (frame,joint,x,y,z)")
    p.add_argument("--ground-truth", help="ground-truth CSV (frame,joint,x,y,z)")
    p.add_argument("--skeleton", help="optional skeleton for bone statistics")
    p.add_argument("--no-reflection", action="store_true", help="forbid reflections in alignment")

    for name, what in (("noise-sweep", "2D noise fractions of the image extent"),
                       ("bone-sweep", "bone-length noise fractions of the mean length")):
        p = sub.add_parser(name, help=f"E_3D on a synthetic scene over {what}")
        _common(p)
        _scene_flags(p)
        p.add_argument("--levels", type=_levels, help=what)
    return parser


def _load_config(path):
    doc = io.read_json(path)
    if not isinstance(doc, dict):
        raise SfamError(f"{path}: config must be a JSON object")
    return doc


def _merge(args, parser_defaults):
    """Fill unset flags from ``--config``; returns (args, solver, scene) dicts."""
    cfg = _load_config(args.config) if args.config else {}
    solver = dict(cfg.pop("solver", {}) or {})
    scene = dict(cfg.pop("scene", {}) or {})
    values = vars(args)
    for key, value in cfg.items():
        key = key.replace("-", "_")
        if key not in values or key in ("command", "config"):
            raise SfamError(f"unknown config key {key!r} for {args.command}")
        if values[key] is None or values[key] is False:
            values[key] = value
    unknown = set(solver) - SOLVER_KEYS
    if unknown:
        raise SfamError(f"unknown solver keys {sorted(unknown)}")
    for key, default in parser_defaults.items():
        if values.get(key) is None:
            values[key] = default
    return values, solver, scene


DEFAULTS = {"seed": 0, "window": pipeline.DEFAULT_WINDOW, "beta": 1.5, "out": "."}


def _run_config(v, solver, **paths):
    scfg = SolverConfig(beta=v["beta"], K=v["rank"], seed=v["seed"], **solver)
    return pipeline.RunConfig(window_size=v["window"], solver=scfg, output_dir=v["out"], **paths)


def _scene(v, scene):
    scene = dict(scene)
    for key in ("frames", "amplitude", "camera_sweep", "camera_tilt"):
        if v.get(key) is not None:
            scene[key] = v[key]
    scene.setdefault("seed", v["seed"])
    return pipeline.scene_spec(scene)


def _require(v, *keys):
    missing = [k for k in keys if not v.get(k)]
    if missing:
        raise SfamError("missing required option(s): "
                        + ", ".join("--" + k.replace("_", "-") for k in missing))


def cmd_reconstruct(v, solver, scene):
    _require(v, "tracks", "skeleton")
    cfg = _run_config(v, solver, tracks_path=v["tracks"], skeleton_path=v["skeleton"],
                      ground_truth_path=v["ground_truth"])
    res = pipeline.run_pipeline(cfg)
    msg = f"reconstructed {res.shapes.frames} frames in {len(res.windows)} window(s)"
    if res.report is not None:
        msg += f"; E3D {res.report.e3d_mm:.4g}, e3D {res.report.e3d_normalized:.4g}"
    print(msg)


def cmd_synth(v, solver, scene):
    spec = _scene(v, scene)
    S_gt, R_gt, W = pipeline.make_scene(spec)
    if v["noise"]:
        W = synth.add_2d_noise(W, v["noise"] * synth.image_extent(W), seed=v["seed"])
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.save_tracks(out / "tracks.csv", W)
    io.save_shapes(out / "ground_truth.csv", S_gt)
    io.save_skeleton(out / "skeleton.json", spec.skeleton, synth.HUMAN12_JOINTS)
    print(f"wrote {spec.frames}-frame scene to {out}")


def cmd_eval(v, solver, scene):
    _require(v, "estimate", "ground_truth")
    S = io.load_shapes(v["estimate"])
    gt = io.load_shapes(v["ground_truth"])
    skel = io.load_skeleton(v["skeleton"]) if v["skeleton"] else None
    report = evaluate(S, gt, skel, allow_reflection=not v["no_reflection"])
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "report.json", report.as_dict())
    print(f"E3D {report.e3d_mm:.4g}, e3D {report.e3d_normalized:.4g}")


def _sweep(v, solver, scene, fn, default_levels, columns, name):
    spec = _scene(v, scene)
    levels = v["levels"] if v["levels"] is not None else default_levels
    cfg = _run_config(v, solver)
    rows = fn(spec, levels, cfg, seed=v["seed"])
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(out / name, columns, rows)
    for row in rows:
        print(" ".join(f"{c}={x:.4g}" for c, x in zip(columns, row)))


def cmd_noise_sweep(v, solver, scene):
    _sweep(v, solver, scene, pipeline.noise_sweep, [0.0, 0.01, 0.02, 0.05],
           ("fraction", "sigma", "e3d", "e3d_normalized"), "noise_sweep.csv")


def cmd_bone_sweep(v, solver, scene):
    _sweep(v, solver, scene, pipeline.bone_sweep, [0.0, 0.05, 0.1, 0.15],
           ("fraction", "e3d", "initial_length_error", "recovered_length_error", "bone_std"),
           "bone_sweep.csv")


COMMANDS = {"reconstruct": cmd_reconstruct, "synth": cmd_synth, "eval": cmd_eval,
            "noise-sweep": cmd_noise_sweep, "bone-sweep": cmd_bone_sweep}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        v, solver, scene = _merge(args, DEFAULTS)
        COMMANDS[args.command](v, solver, scene)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT if isinstance(exc.cause, SolverAbort) else EXIT_INVALID
    except SolverAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (SfamError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
