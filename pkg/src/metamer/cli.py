"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 usage or input error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import descriptors as desc
from .config import ConfigError, RunConfig, load_config, parse_point
from .dump import open_dump, write_dump
from .image import ColorSpace, ImageBuffer, ImageError, load_image, opponent_planes, save_image
from .pipeline import pooled_statistics
from .pooling import (
    GAZE,
    GLOBAL,
    UNIFORM,
    PoolingError,
    PoolingGeometry,
    logpolar_map,
    logpolar_unwarp,
    logpolar_warp,
    warp_valid_mask,
)
from .pyramid import PyramidConfig, PyramidError
from .resample import upsample
from .statistics import band_statistics, catalog
from .synthesis import NumericalAbort, SynthesisError, grad_check, synthesize

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("metamer")


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--rng-seed", type=int, help="seed for every random stream")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_geometry(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--uniform-diameter", type=float, metavar="N", help="uniform pooling, region diameter in pixels")
    g.add_argument("--gaze", metavar="X,Y", help="gaze-centric pooling around this fixation")
    g.add_argument("--global", dest="global_", action="store_true", help="one pooling region over the whole image")
    p.add_argument("--rate", type=float, help="region diameter per pixel of eccentricity (gaze mode)")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.rng_seed is not None:
        overrides["rng_seed"] = args.rng_seed
    if getattr(args, "uniform_diameter", None) is not None:
        overrides.update(pooling=UNIFORM, diameter=args.uniform_diameter)
    if getattr(args, "gaze", None):
        overrides.update(pooling=GAZE, gaze=args.gaze)
    if getattr(args, "global_", False):
        overrides["pooling"] = GLOBAL
    if getattr(args, "rate", None) is not None:
        overrides["rate"] = args.rate
    return cfg.updated(overrides)


def _channels(img: ImageBuffer) -> torch.Tensor:
    t = torch.from_numpy(np.array(img.data))
    return opponent_planes(t) if img.space == ColorSpace.LINEAR_RGB else t


def cmd_stats(args) -> int:
    cfg = _run_config(args)
    img = load_image(args.input)
    pyr = cfg.pyramid()
    out = Path(args.out) if args.out else Path(args.input).with_suffix("")
    if args.pooled:
        geom = cfg.geometry()
        pooled = pooled_statistics(img, pyr, geom)
        bin_path, man_path = write_dump(out, pooled.kinds, pooled.values, geom.manifest())
        print(f"wrote {len(pooled.kinds)} pooled statistics {pooled.values.shape[1]}x{pooled.values.shape[2]} to {bin_path}")
        return EXIT_OK
    color = img.space == ColorSpace.LINEAR_RGB
    kinds = catalog(pyr, color)
    shape = (img.height, img.width)
    dump = open_dump(out, kinds, shape)
    with torch.no_grad():
        for _, index, block in band_statistics(_channels(img), pyr, color):
            for i, plane in zip(index, upsample(block, shape)):
                dump[i] = plane.numpy()
    dump.flush()
    print(f"wrote {len(kinds)} statistics {shape[0]}x{shape[1]} to {dump.filename}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    overrides = []
    if args.seed_from:
        overrides += ["seed_mode=image", f"seed_path={args.seed_from}"]
    if args.max_iters is not None:
        overrides.append(f"max_iters={args.max_iters}")
    if args.optimizer:
        overrides.append(f"optimizer={args.optimizer}")
    args.set = overrides + args.set
    cfg = _run_config(args)
    target = load_image(args.input)
    out = Path(args.out)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".csv")
    try:
        metamer, trace = synthesize(target, cfg.geometry(), cfg.synthesis(), cfg.pyramid())
    except NumericalAbort as exc:
        exc.trace.write_csv(trace_path)
        print(f"error: {exc}; partial trace in {trace_path}", file=sys.stderr)
        return EXIT_NUMERICAL
    save_image(metamer, out)
    trace.write_csv(trace_path)
    errs = np.array(list(trace.kind_errors.values()))
    print(f"iterations {len(trace)}  initial loss {trace.losses[0]:.6g}  final loss {trace.final_loss:.6g}")
    print(f"kinds within 2%: {(errs <= 0.02).sum()}/{len(errs)}  median relative error {np.median(errs):.4g}")
    worst = sorted(trace.kind_errors.items(), key=lambda kv: -kv[1])[:5]
    for kind, err in worst:
        print(f"  {kind}: {err:.4g}")
    print(f"wrote {out} and {trace_path}")
    return EXIT_OK


def _image_paths(inputs) -> list[Path]:
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths += sorted(q for q in p.iterdir() if q.suffix.lower() == ".png")
        elif p.is_file():
            paths.append(p)
        else:
            raise ImageError(f"cannot read image: {p} does not exist")
    if not paths:
        raise ImageError("no PNG images found in " + ", ".join(map(str, inputs)))
    return paths


def cmd_descriptors(args) -> int:
    if args.calibrate and args.apply:
        raise UsageError("--calibrate and --apply are exclusive")
    cfg = _run_config(args)
    dcfg = cfg.descriptors()
    paths = _image_paths(args.inputs)
    planes = [desc._plane(load_image(p)) for p in paths]
    calib = None
    if args.apply:
        if not Path(args.apply).is_file():
            raise ImageError(f"calibration file {args.apply} does not exist")
        calib = desc.Calibration.load(args.apply)
    elif args.calibrate:
        corpus = args.corpus or ",".join(p.name for p in paths)
        calib = desc.calibrate(planes, dcfg, corpus)
        calib.save(args.calibrate)
        print(f"wrote calibration {args.calibrate}")
    rows = []
    for p, plane in zip(paths, planes):
        vec = desc.describe(plane, dcfg, calib)
        if vec.clamped:
            log.warning("%s: clamped to [0, 1]: %s", p.name, ", ".join(vec.clamped))
        rows.append((p.name, vec))
    desc.write_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    pyr = PyramidConfig(args.scales, args.orientations)
    report = grad_check(args.size, pyr, args.tol, n_pixels=args.pixels, seed=args.rng_seed or 0)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_warp(args) -> int:
    cfg = _run_config(args)
    img = load_image(args.input)
    geom = PoolingGeometry.gaze_centric(
        parse_point(args.gaze), cfg.rate, cfg.fovea_radius, min_warped_diameter=cfg.min_warped_diameter
    )
    if args.inverse:
        if not args.image_size:
            raise UsageError("--inverse needs --image-size WxH")
        try:
            w, h = (int(v) for v in args.image_size.lower().split("x"))
        except ValueError:
            raise UsageError(f"--image-size expects WxH, got {args.image_size!r}") from None
        lp = logpolar_map((h, w), geom, min_size=2**cfg.scales)
        if (img.height, img.width) != lp.shape:
            raise ImageError(f"{args.input} is {img.width}x{img.height}, expected warped size {lp.shape[1]}x{lp.shape[0]}")
        out = logpolar_unwarp(img.data, lp, (h, w))
    else:
        shape = (img.height, img.width)
        lp = logpolar_map(shape, geom, min_size=2**cfg.scales)
        # samples whose source falls outside the image are left black
        out = logpolar_warp(img.data, lp) * warp_valid_mask(lp, shape)
    save_image(ImageBuffer(out, img.space), args.out)
    print(f"wrote {args.out} ({out.shape[-1]}x{out.shape[-2]})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metamer", description="Foveated texture statistics, metamers and descriptors.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("stats", help="compute statistic images or pooled statistics")
    p.add_argument("input")
    p.add_argument("--out", help="output prefix (writes PREFIX.bin and PREFIX.manifest)")
    p.add_argument("--pooled", action="store_true", help="pool the statistics")
    _add_geometry(p)
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synthesize", help="synthesize a metamer of the input")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--trace", help="trace CSV (default: next to --out)")
    p.add_argument("--seed-from", help="start from this image instead of matched noise")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--optimizer", choices=("lbfgs", "gd", "adam"))
    _add_geometry(p)
    _add_common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("descriptors", help="texture descriptors for a set of images")
    p.add_argument("inputs", nargs="+", help="PNG files or directories")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--calibrate", metavar="FILE", help="calibrate on these images and write FILE")
    p.add_argument("--apply", metavar="FILE", help="apply an existing calibration")
    p.add_argument("--corpus", help="corpus identifier stored in the calibration")
    _add_common(p)
    p.set_defaults(func=cmd_descriptors)

    p = sub.add_parser("gradcheck", help="compare the gradient with finite differences")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--scales", type=int, default=4)
    p.add_argument("--orientations", type=int, default=4)
    p.add_argument("--pixels", type=int, default=100)
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("warp", help="log-polar warp around a gaze point, or its inverse")
    p.add_argument("input")
    p.add_argument("--gaze", required=True, metavar="X,Y")
    p.add_argument("--inverse", action="store_true")
    p.add_argument("--image-size", metavar="WxH", help="original image size (with --inverse)")
    p.add_argument("--rate", type=float)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_warp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ImageError, ConfigError, PoolingError, PyramidError, desc.DescriptorError, SynthesisError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
