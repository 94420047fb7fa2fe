"""Command-line front end.

Every command prints a JSON report (also written to ``--report``).  Exit
codes: 0 success, 1 usage error, 2 data error (unreadable or inconsistent
inputs); data errors are reported as JSON on stderr.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, calib, capture_sim, gatelosses, geoalign, io, lbfmg, metrics, sampler, synthblur
from .config import ConfigError, load_config, parse_assignment
from .imgcore import BayerImage, ImageError, as_image, pyramid
from .isp import IspConfig, IspPipeline
from .manifest import ManifestError, load_json, load_manifest

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

COMMANDS = ("simulate", "calibrate-color", "correct", "align", "gen-mask", "synth-blur",
            "crop", "evaluate", "loss-check", "pipeline")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


# --- helpers ---------------------------------------------------------------

def _config(args) -> dict:
    over: dict = {}
    for text in args.set or []:
        section, key, value = parse_assignment(text)
        over.setdefault(section, {})[key] = value
    return load_config(args.config, over)


def _isp(cfg) -> IspPipeline:
    return IspPipeline(IspConfig.from_mapping(cfg["isp"]))


def _rgb(path, cfg):
    """Load an image, developing Bayer captures with the configured ISP."""
    img = io.load_image(path)
    if isinstance(img, BayerImage):
        return _isp(cfg)(img)
    return img


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


# --- commands --------------------------------------------------------------

def cmd_simulate(args, cfg):
    from .pipeline import simulate_scene
    nx, ny = cfg["calib"]["grid"]
    m = simulate_scene(_out_dir(args.out), args.seed, args.width, args.height, args.others,
                       args.frames, args.sprite_size, args.shape, args.travel,
                       tuple(args.misalign), args.pattern, (nx, ny), int(cfg["calib"]["patch_size"]),
                       args.script)
    deg = load_json(m.truth["degradation"])
    return {"manifest": os.path.abspath(m.path), "clean_manifest": m.extra["clean_manifest"],
            "width": m.width, "height": m.height,
            "pairs": len(m.pairs) + 2, "gains": deg["gains"], "misalignment": deg["misalignment"]}


def cmd_calibrate_color(args, cfg):
    flat = io.load_image(args.flat)
    nx, ny = args.grid or cfg["calib"]["grid"]
    psz = args.patch_size if args.patch_size is not None else int(cfg["calib"]["patch_size"])
    cal = calib.calibrate_from_flat(flat, int(nx), int(ny), int(psz))
    cal.save(args.out)
    return {"calibration": os.path.abspath(args.out), **cal.to_dict()}


def cmd_correct(args, cfg):
    img = io.load_image(args.input)
    cal = calib.ColorCalibration.load(args.calib)
    out = calib.color_correct(img, cal)
    beta = None
    if args.gains is not None:
        beta = tuple(args.gains)
    elif args.match is not None:
        ref = io.load_image(args.match)
        beta = calib.photometric_gain(out, ref).beta
    if beta is not None:
        out = calib.apply_gain(out, beta)
    io.save_image(out, args.out)
    return {"output": os.path.abspath(args.out), "beta": None if beta is None else list(beta),
            "bayer": isinstance(out, BayerImage)}


def cmd_align(args, cfg):
    inputs = list(args.input or [])
    if args.manifest:
        if args.ref_sharp or args.ref_blur:
            raise UsageError("give either --manifest or --ref-sharp/--ref-blur")
        m = load_manifest(args.manifest)
        ref_sharp, ref_blur = m.static.sharp, m.static.blur
        inputs += [p.blur for _, p in m.all_pairs()[1:]]
    elif args.ref_sharp and args.ref_blur:
        ref_sharp, ref_blur = args.ref_sharp, args.ref_blur
    else:
        raise UsageError("align needs --manifest or both --ref-sharp and --ref-blur")
    ref_s, ref_b = _rgb(ref_sharp, cfg), _rgb(ref_blur, cfg)
    ac = cfg["align"]
    if args.flow:
        flow = io.load_flow(args.flow)
    else:
        flow = geoalign.estimate_flow(ref_s, ref_b, ac["levels"], ac["block"], ac["step"])
    out_dir = _out_dir(args.out_dir)
    io.save_flow(flow, os.path.join(out_dir, "flow.pfm"))
    inner = geoalign.interior(flow, pad=2)
    aligned_ref, _ = geoalign.warp(ref_b, flow)
    crop = lambda a: a[inner[0], inner[1]]
    res = {
        "flow": os.path.join(os.path.abspath(out_dir), "flow.pfm"),
        "flow_mean": [float(flow.u.mean()), float(flow.v.mean())],
        "geometric_error_before": geoalign.geometric_error(crop(ref_s), crop(ref_b)),
        "geometric_error_after": geoalign.geometric_error(crop(ref_s), crop(aligned_ref)),
        "psnr_before": metrics.psnr(crop(ref_s), crop(ref_b)),
        "psnr_after": metrics.psnr(crop(ref_s), crop(aligned_ref)),
        "outputs": [],
    }

    def one(path):
        img = _rgb(path, cfg)
        warped, _ = geoalign.warp(img, flow)
        dst = os.path.join(out_dir, os.path.splitext(os.path.basename(path))[0] + "_aligned.pfm")
        io.save_image(warped, dst)
        return os.path.abspath(dst)

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as ex:
        res["outputs"] = list(ex.map(one, inputs))
    return res


def _gmm_params(cfg):
    c = dict(cfg["lbfmg"])
    size = int(c.pop("open_size"))
    return lbfmg.GmmParams(**c), lbfmg.MorphParams(size=size)


def cmd_gen_mask(args, cfg):
    m = load_manifest(args.manifest)
    load = lambda p: _rgb(p, cfg)
    static = (load(m.static.sharp), load(m.static.blur))
    target = (load(m.target.sharp), load(m.target.blur))
    others = [(load(p.sharp), load(p.blur)) for p in m.pairs]
    params, morph = _gmm_params(cfg)
    res = lbfmg.lbfmg_generate(static, target, others, params, morph, details=True)
    io.write_mask_png(args.out, res.mask)
    out = {"mask": os.path.abspath(args.out), "coverage": float(res.mask.mean()),
           "raw_foreground_sharp": float(np.mean(res.fg_sharp > 1)),
           "raw_foreground_blur": float(np.mean(res.fg_blur > 1))}
    gt = None
    if m.target.mask:
        gt = io.load_mask(m.target.mask)
        out["iou_vs_manifest_mask"] = capture_sim.footprint_iou(res.mask, gt)
    if args.figures:
        out["figures"] = _figs().mask_figure(target[1], res.mask, args.figures, "gen_mask.png", gt)
    return out


def cmd_synth_blur(args, cfg):
    img = as_image(io.load_image(args.input))
    mask = io.load_mask(args.mask)
    res = synthblur.synth_local_blur(img, mask, args.mode, args.steps, args.magnitude,
                                     args.direction, kernel=not args.no_kernel,
                                     kernel_first=args.kernel_first)
    io.save_image(res.image, args.out)
    mask_out = args.mask_out or os.path.splitext(args.out)[0] + "_mask.png"
    io.write_mask_png(mask_out, res.mask)
    out = {"output": os.path.abspath(args.out), "mask": os.path.abspath(mask_out),
           "empty_mask": res.empty, "replaced_fraction": float(res.mask.mean()),
           "span_px": 0.0 if res.empty else synthblur.blur_span(mask, args.mode, args.magnitude)}
    if args.figures:
        out["figures"] = _figs().synth_figure(img, res.image, res.mask, args.figures)
    return out


def cmd_crop(args, cfg):
    size = args.size or int(cfg["sampler"]["size"])
    p_blur = float(cfg["sampler"]["p_blur"])
    rows, contains, blur_branch = [], 0, 0
    draw = 0
    for path in args.mask:
        mask = io.load_mask(path)
        h, w = mask.shape
        idx = sampler._MaskIndex(mask)
        image_id = os.path.splitext(os.path.basename(path))[0]
        for _ in range(args.count):
            spec = sampler.bapc_sample((w, h), idx, args.seed, draw, size, p_blur)
            if not args.no_augment:
                spec = sampler.augment(spec, sampler.rng_for(args.seed, draw, stream=1))
            contains += sampler.contains_blur(mask, spec)
            blur_branch += spec.branch == sampler.BLUR
            rows.append({"image": image_id, "draw": draw, **spec.to_dict()})
            draw += 1
    with open(args.out, "w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    n = max(len(rows), 1)
    return {"patches": os.path.abspath(args.out), "count": len(rows), "size": size,
            "blur_fraction": contains / n, "blur_branch_fraction": blur_branch / n}


def _eval_one(item, radius, mask_align):
    ident, gt_p, pred_p, mask_p = item
    gt, pred = as_image(io.load_image(gt_p)), as_image(io.load_image(pred_p))
    mask = io.load_mask(mask_p) if mask_p else np.ones(gt.shape[:2])
    r = metrics.evaluate_pair(gt, pred, mask, radius, mask_align)
    return {"id": ident, **r.to_dict()}


def cmd_evaluate(args, cfg):
    items = []
    if args.manifest:
        d = load_json(args.manifest)
        root = os.path.dirname(os.path.abspath(args.manifest))
        if not isinstance(d.get("pairs"), list) or not d["pairs"]:
            raise ManifestError(f"{args.manifest}: needs a non-empty 'pairs' list")
        for i, p in enumerate(d["pairs"]):
            if "gt" not in p or "pred" not in p:
                raise ManifestError(f"{args.manifest}: pairs[{i}] needs 'gt' and 'pred'")
            j = lambda k: os.path.join(root, p[k]) if p.get(k) else None
            items.append((str(p.get("id", i)), j("gt"), j("pred"), j("mask")))
    elif args.gt and args.pred:
        items.append(("0", args.gt, args.pred, args.mask))
    else:
        raise UsageError("evaluate needs --manifest or both --gt and --pred")
    radius = args.radius if args.radius is not None else int(cfg["metrics"]["radius"])
    mask_align = args.mask_align or bool(cfg["metrics"]["mask_align"])
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as ex:
        rows = list(ex.map(lambda it: _eval_one(it, radius, mask_align), items))
    reports = [metrics.MetricReport(**{k: r[k] for k in metrics.COLUMNS}, shift_a=tuple(r["shift_a"]))
               for r in rows]
    out = {"columns": list(metrics.COLUMNS), "pairs": rows, "aggregate": metrics.aggregate(reports),
           "settings": {"radius": radius, "mask_align": mask_align, "psnr_cap_db": metrics.PSNR_CAP,
                        "pixel_eps": metrics.PIXEL_EPS}}
    if args.figures:
        out["figures"] = _figs().metrics_figure(out, args.figures)
    return out


def cmd_loss_check(args, cfg):
    rng = np.random.default_rng(args.seed)
    if args.pred and args.gt:
        pred, gt = as_image(io.load_image(args.pred)), as_image(io.load_image(args.gt))
    elif args.pred or args.gt:
        raise UsageError("give both --pred and --gt, or neither for random inputs")
    else:
        gt = rng.random((args.size, args.size, 3))
        pred = np.clip(gt + 0.05 * rng.standard_normal(gt.shape), 0, 1)
    h, w = gt.shape[:2]
    m = io.load_mask(args.gt_mask) if args.gt_mask else np.zeros((h, w))
    m_hat = io.load_mask(args.pred_mask) if args.pred_mask else m
    pp, gp = pyramid(pred, 3), pyramid(gt, 3)
    br = gatelosses.total_loss(pp, gp, m_hat, m)
    checks = {}
    for name in ("mse", "mae", "msfr", "ssim"):
        obj = gatelosses.objective(name, gt)
        checks[name] = gatelosses.grad_check(obj, pred, args.eps, args.points, args.seed).to_dict()
    return {"breakdown": br.to_dict(), "grad_check": checks, "size": [w, h],
            "eps": args.eps, "points": args.points}


def cmd_pipeline(args, cfg):
    from .pipeline import run_pipeline
    if args.gain_source:
        cfg["photometric"]["gain_source"] = args.gain_source
    m = load_manifest(args.manifest)
    out_dir = _out_dir(args.out)
    report = run_pipeline(m, cfg, out_dir, max(1, args.jobs))
    report["processed_manifest"] = os.path.join(os.path.abspath(out_dir), "scene.json")
    if args.figures:
        flow = io.load_flow(os.path.join(out_dir, "flow.pfm"))
        pm = load_manifest(report["processed_manifest"])
        report["figures"] = _figs().pipeline_figures(
            report, args.figures, flow, io.load_image(pm.static.sharp), io.load_image(pm.static.blur))
    return report


def _figs():
    from . import plotting
    return plotting


HANDLERS = {
    "simulate": cmd_simulate, "calibrate-color": cmd_calibrate_color, "correct": cmd_correct,
    "align": cmd_align, "gen-mask": cmd_gen_mask, "synth-blur": cmd_synth_blur, "crop": cmd_crop,
    "evaluate": cmd_evaluate, "loss-check": cmd_loss_check, "pipeline": cmd_pipeline,
}


# --- parser ----------------------------------------------------------------

def build_parser() -> Parser:
    common = Parser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", metavar="FILE", help="TOML configuration file")
    g.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one configuration value (repeatable)")
    g.add_argument("--report", metavar="FILE", help="also write the JSON report here")
    g.add_argument("--no-timestamp", action="store_true",
                   help="omit timestamp and timing so reports are byte-identical across runs")
    g.add_argument("--jobs", type=int, default=1, help="worker threads for per-pair work")
    g.add_argument("--figures", metavar="DIR", help="render PNG figures into DIR")

    p = Parser(prog="localblur", description="Local motion deblurring data toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], help="render and degrade a synthetic scene")
    s.add_argument("--out", required=True, metavar="DIR")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=1024)
    s.add_argument("--height", type=int, default=768)
    s.add_argument("--others", type=int, default=3, help="extra blurred/sharp pairs besides the target")
    s.add_argument("--frames", type=int, default=12, help="sub-frames averaged into the long exposure")
    s.add_argument("--sprite-size", type=int, default=96)
    s.add_argument("--shape", choices=("square", "disc"), default="square")
    s.add_argument("--travel", type=float, help="sprite travel in px (random 15-40 if omitted)")
    s.add_argument("--misalign", type=float, nargs=2, default=(3.0, 0.0), metavar=("DX", "DY"))
    s.add_argument("--pattern", choices=("RGGB", "BGGR", "GRBG", "GBRG"), default="RGGB")
    s.add_argument("--script", metavar="FILE", help="motion script for the target pair")

    s = sub.add_parser("calibrate-color", parents=[common], help="fit colour constants from a flat field")
    s.add_argument("--flat", required=True, metavar="FILE")
    s.add_argument("--grid", type=int, nargs=2, metavar=("NX", "NY"))
    s.add_argument("--patch-size", type=int)
    s.add_argument("--out", required=True, metavar="FILE")

    s = sub.add_parser("correct", parents=[common], help="apply colour constants and optional gains")
    s.add_argument("--input", required=True, metavar="FILE")
    s.add_argument("--calib", required=True, metavar="FILE")
    grp = s.add_mutually_exclusive_group()
    grp.add_argument("--gains", type=float, nargs=3, metavar=("BR", "BG", "BB"))
    grp.add_argument("--match", metavar="FILE", help="choose gains so channel means match this image")
    s.add_argument("--out", required=True, metavar="FILE")

    s = sub.add_parser("align", parents=[common], help="estimate scene flow and warp blurred frames")
    s.add_argument("--manifest", metavar="FILE",
                   help="scene manifest: the static pair is the reference, every other blurred frame is warped")
    s.add_argument("--ref-sharp", metavar="FILE")
    s.add_argument("--ref-blur", metavar="FILE")
    s.add_argument("--input", nargs="*", metavar="FILE", help="extra blurred frames to warp")
    s.add_argument("--flow", metavar="FILE", help="reuse a saved flow instead of estimating one")
    s.add_argument("--out-dir", required=True, metavar="DIR")

    s = sub.add_parser("gen-mask", parents=[common], help="ground-truth blur mask for a scene's target pair")
    s.add_argument("--manifest", required=True, metavar="FILE")
    s.add_argument("--out", required=True, metavar="FILE")

    s = sub.add_parser("synth-blur", parents=[common], help="synthesise local blur on a masked foreground")
    s.add_argument("--input", required=True, metavar="FILE")
    s.add_argument("--mask", required=True, metavar="FILE")
    s.add_argument("--mode", choices=("translation", "rotation"), default="translation")
    s.add_argument("--magnitude", type=float, default=10.0, help="path length in px, or angle in degrees")
    s.add_argument("--direction", type=float, default=0.0, help="translation direction in degrees")
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--no-kernel", action="store_true", help="skip the 5x5 box kernel")
    s.add_argument("--kernel-first", action="store_true", help="apply the kernel before the motion")
    s.add_argument("--out", required=True, metavar="FILE")
    s.add_argument("--mask-out", metavar="FILE")

    s = sub.add_parser("crop", parents=[common], help="blur-aware patch manifests (JSON lines)")
    s.add_argument("--mask", required=True, nargs="+", metavar="FILE")
    s.add_argument("--count", type=int, default=16, help="patches per mask")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int)
    s.add_argument("--no-augment", action="store_true", help="do not draw flips")
    s.add_argument("--out", required=True, metavar="FILE")

    s = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM and weighted/aligned variants")
    s.add_argument("--manifest", metavar="FILE", help='JSON with {"pairs": [{"gt", "pred", "mask"}]}')
    s.add_argument("--gt", metavar="FILE")
    s.add_argument("--pred", metavar="FILE")
    s.add_argument("--mask", metavar="FILE")
    s.add_argument("--radius", type=int)
    s.add_argument("--mask-align", action="store_true", help="restrict the aligned-PSNR search to the mask")

    s = sub.add_parser("loss-check", parents=[common], help="loss breakdown and gradient checks")
    s.add_argument("--pred", metavar="FILE")
    s.add_argument("--gt", metavar="FILE")
    s.add_argument("--pred-mask", metavar="FILE")
    s.add_argument("--gt-mask", metavar="FILE")
    s.add_argument("--size", type=int, default=32, help="side of the random test images")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps", type=float, default=1e-6)
    s.add_argument("--points", type=int, default=32)

    s = sub.add_parser("pipeline", parents=[common],
                       help="colour, photometric, ISP and geometric post-processing of a scene")
    s.add_argument("--manifest", required=True, metavar="FILE")
    s.add_argument("--out", required=True, metavar="DIR")
    s.add_argument("--gain-source", choices=("lightbox", "static", "pair"))
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = _config(args)
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        result = HANDLERS[args.command](args, cfg)
    except (UsageError, ConfigError) as e:
        sys.stderr.write(f"localblur {args.command}: error: {e}\n")
        return EXIT_USAGE
    except (ImageError, ManifestError, OSError, ValueError, json.JSONDecodeError) as e:
        err = {"schema_version": SCHEMA_VERSION, "command": args.command,
               "error": {"type": type(e).__name__, "message": str(e)}}
        sys.stderr.write(dumps(err) + "\n")
        return EXIT_DATA
    report = {"schema_version": SCHEMA_VERSION, "command": args.command,
              "version": __version__, "result": result}
    if not args.no_timestamp:
        report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        report["elapsed_s"] = round(time.perf_counter() - t0, 3)
    text = dumps(report)
    if args.report:
        with open(args.report, "w") as f:
            f.write(text + "\n")
    sys.stdout.write(text + "\n")
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
