"""``udfr`` command line: verify, make-scene, fit, extract, render, eval.

Exit codes: 0 success, 1 verification or evaluation check failed, 2 invalid
arguments or malformed input, 3 file-system failure, 4 fit diverged.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from pathlib import Path

from . import config as cfgmod
from .extract import extract_point_cloud, write_report
from .geometry import chamfer, read_cameras, read_ply, write_ply
from .optimize import FitDiverged, fit, load_checkpoint, save_checkpoint
from .render import RenderConfig, render_image, write_png, write_ppm
from .scenes import (SCENE_NAMES, build_scene, ground_truth_cloud, load_bundle,
                     reference_config, render_references, save_bundle)
from .verify import run_verification, write_rows

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("udfr")


class InputError(Exception):
    """Malformed or inconsistent user input."""


class Outputs:
    """Remembers paths created by a command so a failure can remove them."""

    def __init__(self):
        self.paths = []

    def add(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            self.paths.append(path)
        return path

    def cleanup(self):
        for p in reversed(self.paths):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()


def _load_config(args) -> cfgmod.Config:
    try:
        cfg = cfgmod.Config.load(args.config) if args.config else cfgmod.Config()
        for item in args.set or []:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise InputError(f"--set expects section.key=value, got {item!r}")
            lhs, value = item.split("=", 1)
            section, key = lhs.split(".", 1)
            cfg.set(section.strip(), key.strip(), value.strip())
        cfg.validate()
    except (KeyError, ValueError) as exc:
        raise InputError(f"config: {exc}") from None
    return cfg


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("UDFR_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"UDFR_SEED must be an integer, got {env!r}") from None


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise InputError("--threads must be at least 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# commands ---------------------------------------------------------------------
def cmd_verify(args, cfg, seed, out: Outputs) -> int:
    rows = run_verification(cfg.density_params(), seed=seed)
    if args.output:
        write_rows(out.add(args.output), rows)
    for r in rows:
        print(f"{r.claim:40s} {r.computed:12.6g} {r.reference:12.6g} "
              f"{'pass' if r.passed else 'FAIL'}")
    failed = [r.claim for r in rows if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(rows)} checks failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_make_scene(args, cfg, seed, out: Outputs) -> int:
    g = lambda n: cfg.get("scene", n)  # noqa: E731
    try:
        scene = build_scene(args.name, texture=g("texture"), n_views=g("n_views"),
                            resolution=g("image_size"), camera_radius=g("camera_radius"))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    images = render_references(scene, seed=seed, s=g("reference_s"))
    gt = ground_truth_cloud(scene, g("gt_points"), seed=seed)
    save_bundle(out.add(args.out_dir), scene, images, gt)
    print(f"wrote {len(images)} views of {scene.name} to {args.out_dir}")
    return EXIT_OK


def cmd_fit(args, cfg, seed, out: Outputs) -> int:
    try:
        images, cams, _, _ = load_bundle(args.scene_dir)
    except ValueError as exc:
        raise InputError(f"{args.scene_dir}: {exc}") from None
    tcfg = cfg.train_config(seed=seed)
    target = out.add(args.checkpoint)
    try:
        state = fit(images, cams, tcfg, dump_dir=target / "diverged")
    except FitDiverged as exc:
        print(f"fit diverged: {exc}; diagnostics in {target / 'diverged'}", file=sys.stderr)
        out.paths.remove(target)  # keep the diagnostic dump
        return EXIT_DIVERGED
    save_checkpoint(target, state)
    print(f"final s={state.s:.1f}, loss={state.history[-1][5]:.5f}; checkpoint {target}")
    return EXIT_OK


def cmd_extract(args, cfg, seed, out: Outputs) -> int:
    state = load_checkpoint(args.checkpoint)
    cams = read_cameras(args.cameras)
    if not cams:
        raise InputError(f"{args.cameras}: no cameras")
    ecfg = cfg.extraction_config(seed=seed)
    report = []
    cloud = extract_point_cloud(state.udf_field(), cams, state.density_params(), ecfg, report)
    write_ply(out.add(args.out_ply), cloud)
    if args.report:
        write_report(out.add(args.report), report)
    print(f"extracted {len(cloud)} points from {len(cams)} cameras (s={state.s:.1f})")
    return EXIT_OK


def _field_source(spec, cfg):
    """``scene:<name>`` for an analytic scene, otherwise a checkpoint directory."""
    if spec.startswith("scene:"):
        scene = build_scene(spec[6:], texture=cfg.get("scene", "texture"))
        return scene.udf, scene.color, cfg.density_params(s=cfg.get("scene", "reference_s"))
    state = load_checkpoint(spec)
    return state.udf_field(), state.color_field(), state.density_params()


def cmd_render(args, cfg, seed, out: Outputs) -> int:
    try:
        udf, color, params = _field_source(args.source, cfg)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    cams = read_cameras(args.cameras)
    if not 0 <= args.index < len(cams):
        raise InputError(f"camera index {args.index} out of range (0..{len(cams) - 1})")
    rcfg = RenderConfig(sampling=reference_config().sampling if args.reference
                        else cfg.sampling_config())
    img = render_image(udf, color, cams[args.index], params, rcfg, seed=seed)
    path = out.add(args.out_image)
    (write_png if path.suffix.lower() == ".png" else write_ppm)(path, img)
    print(f"rendered camera {args.index} to {path}")
    return EXIT_OK


def cmd_eval(args, cfg, seed, out: Outputs) -> int:
    a, b = read_ply(args.ply), read_ply(args.gt_ply)
    if len(a) == 0 or len(b) == 0:
        raise InputError("cannot evaluate an empty point cloud")
    value = chamfer(a, b)
    print(f"{value * 1e3:.3f}")
    if args.threshold is not None and not value < args.threshold:
        return EXIT_CHECK
    return EXIT_OK


# parser -----------------------------------------------------------------------
def _common(p):
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (default: $UDFR_SEED, else 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for compiled kernels (default: available cores)")
    p.add_argument("--config", default=None, help="INI config file (see keys below)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config key; may be repeated")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys and defaults:\n" + cfgmod.describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="udfr", description=__doc__.splitlines()[0],
                                     epilog=epilog, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=epilog,
                           formatter_class=fmt)
        _common(p)
        p.set_defaults(func=func)
        return p

    p = add("verify", cmd_verify, "check the density and sampling claims numerically")
    p.add_argument("-o", "--output", help="CSV of claim, computed, reference value, pass")

    p = add("make-scene", cmd_make_scene, "render a synthetic scene bundle")
    p.add_argument("name", help=f"one of: {', '.join(SCENE_NAMES)}")
    p.add_argument("out_dir")

    p = add("fit", cmd_fit, "fit a UDF grid to a scene bundle")
    p.add_argument("scene_dir")
    p.add_argument("checkpoint", help="output checkpoint directory")

    p = add("extract", cmd_extract, "extract a point cloud from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("cameras", help="camera file (for example <scene_dir>/cameras.txt)")
    p.add_argument("out_ply")
    p.add_argument("--report", help="per-camera extraction CSV")

    p = add("render", cmd_render, "render one view of a checkpoint or analytic scene")
    p.add_argument("source", help="checkpoint directory or scene:<name>")
    p.add_argument("cameras")
    p.add_argument("out_image", help=".ppm or .png")
    p.add_argument("--index", type=int, default=0, help="camera index (default 0)")
    p.add_argument("--reference", action="store_true", help="use 512 samples per ray")

    p = add("eval", cmd_eval, "symmetric Chamfer distance between two PLY clouds")
    p.add_argument("ply")
    p.add_argument("gt_ply")
    p.add_argument("--threshold", type=float, default=None,
                   help="exit 1 unless the Chamfer distance is below this value")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Outputs()
    try:
        _set_threads(args.threads)
        cfg = _load_config(args)
        seed = _seed(args)
        code = args.func(args, cfg, seed, out)
    except InputError as exc:
        out.cleanup()
        print(f"udfr {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        out.cleanup()
        print(f"udfr {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        out.cleanup()
        print(f"udfr {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if code not in (EXIT_OK, EXIT_CHECK):
        out.cleanup()
    return code


if __name__ == "__main__":
    sys.exit(main())
