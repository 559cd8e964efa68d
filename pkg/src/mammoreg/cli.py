"""Command line entry point: ``mammoreg <subcommand> ...``.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import fileio
from .bspline import BSplineGrid, BSplineParams, grid_to_field, register_bspline
from .demons import DemonsParams, RegistrationError, register_demons
from .harness import (
    ExperimentConfig,
    read_rows,
    run_experiment,
    summarize,
    write_rows,
    write_summary,
)
from .image import Mask, flip_horizontal, warp
from .metrics import JEH_BINS, MI_BINS, jeh_image, joint_histogram, metric_report
from .segmentation import SegmentationError, segment_breast
from .synth import ConfigError, SynthConfig, build_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2


def _read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def _params_block(path, key):
    return _read_json(path).get(key, {}) if path else {}


def cmd_synth(args):
    raw = _read_json(args.config)
    if "output_dir" in raw and not Path(raw["output_dir"]).is_absolute():
        raw["output_dir"] = str(Path(args.config).parent / raw["output_dir"])
    cases = build_dataset(SynthConfig.from_dict(raw))
    print(f"wrote {len(cases)} cases")


def cmd_segment(args):
    fileio.save_mask(segment_breast(fileio.load_pgm(args.image)), args.output)


def cmd_register(args):
    fixed = fileio.load_pgm(args.fixed)
    moving = fileio.load_pgm(args.moving)
    if args.flip:
        moving = flip_horizontal(moving)
    mask = fileio.load_mask(args.mask) if args.mask else segment_breast(fixed)
    method = args.method.replace("-", "_")
    if method == "bspline":
        try:
            params = BSplineParams(**_params_block(args.params, "bspline"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad bspline parameters: {exc}") from exc
        res = register_bspline(fixed, moving, mask, params)
        if args.grid_json:
            res.grid.save(args.grid_json)
        field = grid_to_field(res.grid, fixed.width, fixed.height, fixed.spacing, fixed.origin)
    else:
        block = {**_params_block(args.params, "demons"), "variant": "classic" if method == "demons" else "symmetric"}
        try:
            params = DemonsParams(**block)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad demons parameters: {exc}") from exc
        field = register_demons(fixed, moving, mask, params).field
    fileio.save_field(field, args.output)


def cmd_warp(args):
    moving = fileio.load_pgm(args.moving)
    if args.flip:
        moving = flip_horizontal(moving)
    if args.field:
        field = fileio.load_field(args.field)
    else:
        ref = fileio.load_pgm(args.reference) if args.reference else moving
        field = grid_to_field(BSplineGrid.load(args.grid), ref.width, ref.height, ref.spacing, ref.origin)
    fileio.save_pgm(warp(moving, field), args.output)


def cmd_metrics(args):
    fixed = fileio.load_pgm(args.fixed)
    moving = fileio.load_pgm(args.moving)
    mask = fileio.load_mask(args.mask) if args.mask else Mask.full(fixed)
    rep = metric_report(fixed, moving, mask, args.bins)
    print(json.dumps({"ssd": rep.ssd, "cc": rep.cc, "mi": rep.mi, "h_joint": rep.h_joint,
                      "n_pixels": rep.n_pixels}))


def cmd_run(args):
    config = ExperimentConfig.load(args.config)
    if args.jobs:
        config.jobs = args.jobs
    rows = run_experiment(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / "rows.csv")
    write_summary(summarize(rows), out / "summary.csv")
    failed = sum(not r.ok for r in rows)
    print(f"{len(rows)} rows ({failed} failed) -> {out / 'rows.csv'}")


def cmd_report(args):
    if not Path(args.rows).exists():
        raise ConfigError(f"rows file not found: {args.rows}")
    rows = read_rows(args.rows)
    if not rows:
        raise ValueError(f"{args.rows} has no rows")
    write_summary(summarize(rows), args.output)


def cmd_jeh(args):
    fixed = fileio.load_pgm(args.fixed)
    moving = fileio.load_pgm(args.moving)
    mask = fileio.load_mask(args.mask) if args.mask else Mask.full(fixed)
    hist = joint_histogram(fixed, moving, mask, args.bins)
    fileio.save_pgm(jeh_image(hist, args.size), args.output, bit_depth=8, write_meta=False)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mammoreg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark from a JSON config")
    p.add_argument("config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="breast mask of one image")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("register", help="register moving onto fixed and save the field")
    p.add_argument("--method", choices=["bspline", "demons", "demons-sym"], required=True)
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--mask", help="fixed-image mask (default: segment the fixed image)")
    p.add_argument("--flip", action="store_true", help="mirror the moving image first")
    p.add_argument("--params", help="JSON file with 'demons'/'bspline' parameter blocks")
    p.add_argument("--grid-json", help="also save the B-spline grid")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("warp", help="warp an image with a saved field or grid")
    p.add_argument("--moving", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--field")
    src.add_argument("--grid")
    p.add_argument("--reference", help="image whose geometry a grid is evaluated on")
    p.add_argument("--flip", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("metrics", help="SSD, CC, MI over a mask, printed as JSON")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--mask")
    p.add_argument("--bins", type=int, default=MI_BINS)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("run", help="run an experiment config; writes rows.csv and summary.csv")
    p.add_argument("config")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="grouped summary of a rows CSV")
    p.add_argument("rows")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("jeh", help="joint entropy histogram image of a pair")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--mask")
    p.add_argument("--bins", type=int, default=JEH_BINS)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_jeh)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, SegmentationError, RegistrationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
