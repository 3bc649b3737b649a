"""Command-line front end: render rigs, synthesize views, evaluate and optimize depth.

Exit codes: 0 ok, 1 usage, 2 I/O or input mismatch, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .disparity import BaselineSpec
from .io import read_color, read_manifest, read_pfm, write_color, write_manifest, write_mask, write_pfm
from .metrics import evaluate as evaluate_depth
from .optim import DivergenceError, Mode, OptimConfig, optimize_depth
from .renderer import inverse_warp, splat_render
from .scenegen import RIG_BASELINE, StereoRig, default_scene, make_rig, parse_scene
from .sphere import ErpGrid
from .supervision import LossConfig, parse_loss_config

log = logging.getLogger("sphsynth")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
VIEWS = ("center", "up", "right")
MANIFEST = "manifest.txt"


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _usage(msg):
    return CliError(msg, EXIT_USAGE)


def _io(msg):
    return CliError(msg, EXIT_IO)


def _vec3(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return vals


def _grid(text):
    try:
        return ErpGrid.from_string(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_depth(path):
    try:
        return read_pfm(path).astype(np.float64)
    except OSError as exc:
        raise _io(f"cannot read {path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise _io(str(exc)) from None


def _load_color(path):
    try:
        return read_color(path)
    except OSError as exc:
        raise _io(f"cannot read {path}: {exc}") from None


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _io(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def _psnr(a, b, valid):
    err = ((a - b) ** 2)[valid].mean()
    return float("inf") if err == 0 else float(10 * np.log10(1.0 / err))


# -- render ---------------------------------------------------------------------------

def cmd_render(args):
    if args.baseline < 0:
        raise _usage("--baseline must be non-negative")
    if args.supersample < 1:
        raise _usage("--supersample must be >= 1")
    if args.scene == "default":
        scene = default_scene(args.seed)
    else:
        try:
            text = Path(args.scene).read_text()
        except OSError as exc:
            raise _io(f"cannot read scene {args.scene}: {exc.strerror or exc}") from None
        try:
            scene = parse_scene(text, args.seed)
        except ValueError as exc:
            raise _io(f"{args.scene}: {exc}") from None
    out = _out_dir(args.out)
    try:
        rig = make_rig(scene, args.center, args.baseline, args.grid, args.supersample)
    except ValueError as exc:
        raise CliError(f"render failed: {exc}", EXIT_NUMERIC) from None
    files = {}
    for view in VIEWS:
        color, depth = getattr(rig, view)
        files[f"{view}_color"] = f"{view}_color.png"
        files[f"{view}_depth"] = f"{view}_depth.pfm"
        write_color(out / files[f"{view}_color"], color)
        write_pfm(out / files[f"{view}_depth"], depth)
    entries = {
        "version": __version__,
        "grid": str(args.grid),
        "baseline": repr(float(args.baseline)),
        "seed": args.seed,
        "scene": args.scene,
        "center": ",".join(repr(float(c)) for c in args.center),
        "supersample": args.supersample,
        "lon_step": repr(args.grid.ang_res_lon),
        "lat_step": repr(args.grid.ang_res_lat),
        **files,
    }
    write_manifest(out / MANIFEST, entries)
    print(f"wrote {len(files)} rasters and {MANIFEST} to {out}")
    return EXIT_OK


def load_rig(rig_dir) -> tuple[StereoRig, dict]:
    """Rebuild a :class:`StereoRig` from a rendered directory."""
    rig_dir = Path(rig_dir)
    try:
        man = read_manifest(rig_dir / MANIFEST)
    except OSError as exc:
        raise _io(f"cannot read rig manifest in {rig_dir}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise _io(str(exc)) from None
    missing = [k for k in ("grid", "baseline") + tuple(f"{v}_{t}" for v in VIEWS for t in ("color", "depth")) if k not in man]
    if missing:
        raise _io(f"rig manifest is incomplete, missing {missing}")
    try:
        grid = ErpGrid.from_string(man["grid"])
        baseline = float(man["baseline"])
    except ValueError as exc:
        raise _io(f"bad rig manifest: {exc}") from None
    views = {}
    for view in VIEWS:
        color = _load_color(rig_dir / man[f"{view}_color"])
        depth = _load_depth(rig_dir / man[f"{view}_depth"])
        if color.shape[:2] != grid.shape or depth.shape != grid.shape:
            raise _io(f"{view} rasters do not match the manifest grid {grid}")
        views[view] = (color, depth)
    return StereoRig(grid, baseline, views["center"], views["up"], views["right"]), man


# -- synthesize -----------------------------------------------------------------------

def cmd_synthesize(args):
    color = _load_color(args.center_color)
    depth = _load_depth(args.center_depth)
    if color.shape[:2] != depth.shape:
        raise _io(f"grid mismatch: color is {color.shape[1]}x{color.shape[0]}, depth is {depth.shape[1]}x{depth.shape[0]}")
    try:
        grid = ErpGrid(depth.shape[1], depth.shape[0])
    except ValueError as exc:
        raise _io(str(exc)) from None
    if not np.all(np.isfinite(depth)) or not np.all(depth > 0):
        raise CliError("depth must be finite and positive", EXIT_NUMERIC)
    baseline = BaselineSpec(args.axis, args.baseline)
    if args.method == "splat":
        res = splat_render(color, depth, baseline, grid=grid)
        image, mask = res.color, res.mask
    else:
        # sample the source at the displaced angles, using its own depth as a proxy for the target's
        image = inverse_warp(color, depth, baseline.negated(), grid)
        mask = np.zeros(grid.shape, dtype=bool)
    out = _out_dir(args.out)
    write_color(out / "synth.png", image)
    write_mask(out / "mask.png", mask)
    msg = f"{args.method}: wrote synth.png and mask.png to {out} ({int(mask.sum())} masked pixels)"
    if args.reference:
        ref = _load_color(args.reference)
        if ref.shape != image.shape:
            raise _io("reference image does not match the synthesized grid")
        # compare at the precision that was written to disk
        msg += f"; PSNR vs reference {_psnr(np.rint(image * 255) / 255, ref, ~mask):.2f} dB"
    print(msg)
    return EXIT_OK


# -- evaluate -------------------------------------------------------------------------

_MANIFEST_KEYS = ("grid", "baseline", "seed", "version")


def _sibling_manifest(path):
    candidate = Path(path).parent / MANIFEST
    return read_manifest(candidate) if candidate.is_file() else None


def cmd_evaluate(args):
    pred = _load_depth(args.pred)
    gt = _load_depth(args.gt)
    if pred.shape != gt.shape:
        raise _io(f"grid mismatch: pred is {pred.shape[1]}x{pred.shape[0]}, gt is {gt.shape[1]}x{gt.shape[0]}")
    try:
        m_pred, m_gt = _sibling_manifest(args.pred), _sibling_manifest(args.gt)
    except ValueError as exc:
        raise _io(str(exc)) from None
    if m_pred is not None and m_gt is not None:
        diff = [k for k in _MANIFEST_KEYS if m_pred.get(k) != m_gt.get(k)]
        if diff and not args.force:
            raise _io(f"manifests disagree on {diff}; pass --force to evaluate anyway")
    if args.scale != 1.0:
        pred = pred * args.scale
    try:
        report = evaluate_depth(pred, gt)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    if args.out:
        try:
            Path(args.out).write_text(report.to_csv())
        except OSError as exc:
            raise _io(f"cannot write {args.out}: {exc.strerror or exc}") from None
    print(report.table())
    return EXIT_OK


# -- optimize -------------------------------------------------------------------------

def cmd_optimize(args):
    if args.steps < 1:
        raise _usage("--steps must be >= 1")
    if args.ratio is not None and not 0.0 <= args.ratio <= 1.0:
        raise _usage("--ratio must lie in [0, 1]")
    loss_cfg = LossConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise _io(f"cannot read config {args.config}: {exc.strerror or exc}") from None
        try:
            loss_cfg = parse_loss_config(text)
        except ValueError as exc:
            raise _usage(f"{args.config}: {exc}") from None
    if args.ratio is not None:
        loss_cfg = replace(loss_cfg, lambda_ratio=args.ratio)
    rig, man = load_rig(args.rig_dir)
    cfg = OptimConfig(steps=args.steps, step_size=args.step_size, init_depth=args.init_depth,
                      loss=loss_cfg, mode=Mode(args.mode))
    gt = rig.center[1]
    try:
        depth, trace = optimize_depth(rig, cfg, gt=gt)
    except DivergenceError as exc:
        raise CliError(f"optimization diverged: {exc}", EXIT_NUMERIC) from None
    out = _out_dir(args.out)
    write_pfm(out / "depth.pfm", depth)
    rows = ["step,loss,abs_rel"] + [f"{r.step},{r.loss!r},{r.abs_rel!r}" for r in trace]
    (out / "trace.csv").write_text("\n".join(rows) + "\n")
    report = evaluate_depth(read_pfm(out / "depth.pfm").astype(np.float64), gt)
    (out / "report.csv").write_text(report.to_csv())
    write_manifest(out / MANIFEST, {k: man[k] for k in _MANIFEST_KEYS if k in man} | {
        "mode": cfg.mode.value, "ratio": repr(loss_cfg.lambda_ratio), "steps": cfg.steps})
    print(f"mode {cfg.mode.value}: abs_rel {trace[0].abs_rel:.4f} -> {trace[-1].abs_rel:.4f} after {cfg.steps} steps")
    print(report.table())
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphsynth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="raycast a center/up/right rig")
    r.add_argument("scene", help="scene description file, or 'default'")
    r.add_argument("--grid", type=_grid, default=ErpGrid(512, 256), help="WxH (default 512x256)")
    r.add_argument("--baseline", type=float, default=RIG_BASELINE, help="meters (default 0.26)")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--center", type=_vec3, default=(0.0, 0.0, 0.0), help="camera position x,y,z")
    r.add_argument("--supersample", type=int, default=2, help="color rays per pixel axis")
    r.set_defaults(fn=cmd_render)

    s = sub.add_parser("synthesize", help="render a displaced view from color + depth")
    s.add_argument("center_color")
    s.add_argument("center_depth")
    s.add_argument("--baseline", type=float, required=True, help="target minus source position, meters")
    s.add_argument("--axis", choices=("x", "y"), required=True)
    s.add_argument("--method", choices=("splat", "inverse"), default="splat")
    s.add_argument("--out", required=True)
    s.add_argument("--reference", help="optional ground-truth view for a PSNR report")
    s.set_defaults(fn=cmd_synthesize)

    e = sub.add_parser("evaluate", help="weighted depth metrics")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--out", help="CSV report path")
    e.add_argument("--scale", type=float, default=1.0, help="multiply pred by this factor first")
    e.add_argument("--force", action="store_true", help="ignore manifest mismatches")
    e.set_defaults(fn=cmd_evaluate)

    o = sub.add_parser("optimize", help="recover center depth by descending the synthesis loss")
    o.add_argument("rig_dir")
    o.add_argument("--mode", choices=[m.value for m in Mode], default="ud")
    o.add_argument("--ratio", type=float, default=None, help="trinocular blend weight of the UD loss")
    o.add_argument("--steps", type=int, default=300)
    o.add_argument("--step-size", type=float, default=0.05)
    o.add_argument("--init-depth", type=float, default=2.0)
    o.add_argument("--config", help="loss config file (key = value)")
    o.add_argument("--out", required=True)
    o.set_defaults(fn=cmd_optimize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"sphsynth {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        # configuration values rejected by the library
        print(f"sphsynth {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"sphsynth {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
