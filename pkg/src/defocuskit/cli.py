"""Command line front end.

Exit codes: 0 on success, 1 on runtime failures (bad files, failed
calibration), 2 on usage errors (unknown flags, malformed camera files).
All outputs are deterministic: the same inputs produce byte-identical
files.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import calib, depth, optics, raster, render
from .errors import ConfigError


def _load_model(path):
    params, gamma = optics.load_camera_file(path)
    return params, optics.model_from_params(params, gamma)


def _pattern_spec(args) -> render.PatternSpec:
    return render.PatternSpec(rows=args.rows, cols=args.cols,
                              diameter=args.diameter_m,
                              diagonal_spacing=args.spacing_m)


def _add_pattern_flags(sub):
    sub.add_argument("--rows", type=int, default=11)
    sub.add_argument("--cols", type=int, default=4)
    sub.add_argument("--diameter-m", type=float, default=0.04)
    sub.add_argument("--spacing-m", type=float, default=0.08)


def cmd_kcam(args) -> int:
    _, model = _load_model(args.params)
    print("%.2f" % model.kcam)
    return 0


def cmd_curve(args) -> int:
    _, model = _load_model(args.params)
    if args.steps < 2 or args.s2_min <= 0.0 or args.s2_max <= args.s2_min:
        raise ConfigError("curve needs 0 < --s2-min < --s2-max and --steps >= 2")
    rows = optics.blur_curve(model, args.s2_min, args.s2_max, args.steps)
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write("s2_m,sigma_px\n")
        for d, s in rows:
            fh.write("%.9g,%.9g\n" % (d, s))
    return 0


def cmd_refocus(args) -> int:
    _, model = _load_model(args.params)
    rgb = raster.load_image(args.rgb)
    dm = raster.load_depth(args.depth)
    if args.truth:
        stem, ext = os.path.splitext(args.out)
        if ext.lower() != ".png":
            raise ConfigError("--truth requires a .png --out to derive the stem")
        render.write_dataset_sample(stem, rgb, dm, model, layers=args.layers)
    else:
        out = render.refocus(rgb, dm, model, layers=args.layers)
        raster.save_image(out, args.out)
    return 0


def cmd_genpattern(args) -> int:
    spec = _pattern_spec(args)
    if args.params:
        params, model = _load_model(args.params)
        f_pix = args.f_pix if args.f_pix is not None else optics.focal_px(params)
        focused, defocused, _ = render.render_calibration_pair(
            spec, args.distance_m, model, f_pix, args.width, args.height)
        stem, ext = os.path.splitext(args.out)
        if ext.lower() not in (".png", ".pgm"):
            raise ConfigError("genpattern --out must end in .png or .pgm")
        raster.save_image(focused, stem + "_focused" + ext)
        raster.save_image(defocused, stem + "_defocused" + ext)
    else:
        if args.f_pix is None:
            raise ConfigError("genpattern needs --f-pix when no --params is given")
        img, _ = render.render_pattern(spec, args.distance_m, args.f_pix,
                                       args.width, args.height)
        raster.save_image(img, args.out)
    return 0


def cmd_calibrate(args) -> int:
    params, model = _load_model(args.params)
    spec = _pattern_spec(args)
    f_pix = args.f_pix if args.f_pix is not None else optics.focal_px(params)
    base = os.path.dirname(os.path.abspath(args.manifest))
    pairs = []
    with open(args.manifest, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigError("manifest line %d: expected 'focused defocused'" % lineno)
            pairs.append(tuple(
                raster.load_image(p if os.path.isabs(p) else os.path.join(base, p))
                for p in parts
            ))
    result = calib.calibrate(pairs, spec, f_pix, model.s1,
                             threshold=args.threshold,
                             normalization=args.normalization)
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write("kcam_px=%.6f\n" % result.kcam)
        fh.write("gamma_px=%.6f\n" % result.gamma)
        fh.write("n_estimates=%d\n" % len(result.estimates))
        fh.write("n_inliers=%d\n" % result.inlier_count)
        fh.write("q1_px=%.6f\n" % result.q1)
        fh.write("q3_px=%.6f\n" % result.q3)
    if args.csv:
        with open(args.csv, "w", encoding="ascii") as fh:
            fh.write("pair,x_px,y_px,radius_px,distance_m,lambda_px,kcam_px\n")
            for index, obs, lam, k in result.records:
                fh.write("%d,%.3f,%.3f,%.3f,%.6f,%.4f,%.4f\n"
                         % (index, obs.x, obs.y, obs.radius, obs.distance, lam, k))
    print("%.2f" % result.kcam)
    return 0


def cmd_invert(args) -> int:
    _, model = _load_model(args.params)
    bm = raster.load_blur(args.blur)
    gt = raster.load_depth(args.gt) if args.gt else None
    dm = depth.invert_blur_map(bm, model, policy=args.policy, gt=gt)
    raster.save_depth(dm, args.out)
    return 0


def cmd_sweep(args) -> int:
    _, model = _load_model(args.params)
    bm = raster.load_blur(args.blur)
    gt = raster.load_depth(args.gt)
    if args.steps < 2 or args.kcam_min <= 0.0 or args.kcam_max <= args.kcam_min:
        raise ConfigError("sweep needs 0 < --kcam-min < --kcam-max and --steps >= 2")
    values = np.linspace(args.kcam_min, args.kcam_max, args.steps)
    rows = depth.kcam_sweep(bm, gt, model, values, policy=args.policy,
                            range_max=args.range_max)
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write("kcam_px,rmse_m\n")
        for k, r in rows:
            fh.write("%.9g,%.9g\n" % (k, r))
    return 0


def cmd_metrics(args) -> int:
    pred = raster.load_depth(args.pred)
    gt = raster.load_depth(args.gt)
    m = depth.compute_metrics(pred, gt, range_max=args.range_max)
    for key in ("rel", "mse", "rmse", "log10", "delta1", "delta2", "delta3", "count"):
        value = getattr(m, key)
        if key == "count":
            print("count=%d" % value)
        else:
            print("%s=%.9g" % (key, value))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="defocuskit",
                                 description="camera-aware defocus blur toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kcam", help="print the defocus gain of a camera file")
    p.add_argument("--params", required=True)
    p.set_defaults(func=cmd_kcam)

    p = sub.add_parser("curve", help="CSV of sigma versus depth")
    p.add_argument("--params", required=True)
    p.add_argument("--s2-min", type=float, required=True)
    p.add_argument("--s2-max", type=float, required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("refocus", help="apply depth-dependent blur to an image")
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=16)
    p.add_argument("--truth", action="store_true",
                   help="also write <stem>_depth.pfm, <stem>_blur.pfm and meta.txt")
    p.set_defaults(func=cmd_refocus)

    p = sub.add_parser("genpattern", help="render a calibration target (pair with --params)")
    _add_pattern_flags(p)
    p.add_argument("--distance-m", type=float, required=True)
    p.add_argument("--f-pix", type=float, default=None)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--params", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_genpattern)

    p = sub.add_parser("calibrate", help="recover kcam from focused/defocused pairs")
    _add_pattern_flags(p)
    p.add_argument("--manifest", required=True,
                   help="text file, one 'focused defocused' path pair per line")
    p.add_argument("--params", required=True)
    p.add_argument("--f-pix", type=float, default=None)
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--normalization", choices=("slice", "image"), default="slice")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("invert", help="blur map to depth map")
    p.add_argument("--blur", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--policy", choices=depth.POLICIES, default="near")
    p.add_argument("--gt", default=None, help="ground truth depth (oracle policy)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("sweep", help="RMSE versus assumed kcam")
    p.add_argument("--blur", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--kcam-min", type=float, required=True)
    p.add_argument("--kcam-max", type=float, required=True)
    p.add_argument("--steps", type=int, default=13)
    p.add_argument("--policy", choices=depth.POLICIES, default="near")
    p.add_argument("--range-max", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="depth accuracy of a prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--range-max", type=float, default=2.0)
    p.set_defaults(func=cmd_metrics)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
