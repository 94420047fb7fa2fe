"""Scene files on disk and the paired post-processing chain.

``simulate_scene`` renders a scene, degrades it the way a two-camera rig
would, and writes RAW captures plus a manifest.  ``run_pipeline`` undoes the
degradations in order: colour correction, photometric alignment, ISP, then
geometric alignment with one flow per scene.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import calib, capture_sim, geoalign, io, metrics
from .config import DEFAULTS, GAIN_SOURCES
from .imgcore import BayerImage, ImageError, mosaic
from .isp import IspConfig, IspPipeline
from .manifest import ManifestError, PairEntry, SceneManifest

COLOR_TOL = 1e-6
IMAGE_TOL = 1e-5
GAIN_TOL = 1e-6
GEOM_TOL = 1.0
PSNR_GAIN = 10.0


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# --- simulation to disk -----------------------------------------------------

def simulate_scene(out_dir, seed: int = 0, width: int = 1024, height: int = 768,
                   n_others: int = 3, frames: int = 12, sprite_size: int = 96,
                   shape: str = "square", travel: float | None = None,
                   misalignment=(3.0, 0.0), pattern: str = "RGGB",
                   grid=(10, 8), calib_patch: int = 2, script_path=None) -> SceneManifest:
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    bg = None
    target_script = None
    if script_path is not None:
        target_script = capture_sim.MotionScript.load(script_path)
        bg = target_script.background
        height, width = bg.shape[:2]
    scene = capture_sim.make_scene(rng, width, height, n_others, frames, sprite_size, shape,
                                   travel, background=bg)
    if target_script is not None:
        scene.target = capture_sim.simulate_pair(target_script)
    deg = capture_sim.random_degradation(rng, width, height, tuple(grid), calib_patch,
                                         tuple(misalignment), pattern)

    def cam_s(img):
        return capture_sim.capture(img, deg.cast_sharp, pattern)

    def cam_b(img, shift=True):
        return capture_sim.capture(img, deg.cast_blur, pattern, deg.gains,
                                   deg.misalignment if shift else None)

    j = lambda name: os.path.join(out_dir, name)
    flat = capture_sim.flat_field(width, height)
    io.save_image(cam_s(flat), j("lightbox_S.pfm"))
    io.save_image(cam_b(flat, shift=False), j("lightbox_B.pfm"))

    clean_dir = j("clean")
    os.makedirs(clean_dir, exist_ok=True)
    clean = {}

    def write_pair(name, blurred, sharp, gt=None):
        io.save_image(cam_s(sharp), j(f"{name}_S.pfm"))
        io.save_image(cam_b(blurred), j(f"{name}_B.pfm"))
        cs, cb = os.path.join(clean_dir, f"{name}_S.pfm"), os.path.join(clean_dir, f"{name}_B.pfm")
        io.save_image(sharp, cs)
        io.save_image(blurred, cb)
        mask = None
        if gt is not None:
            mask = j(f"{name}_mask.png")
            io.write_mask_png(mask, gt)
        clean[name] = PairEntry(cs, cb, mask)
        return PairEntry(j(f"{name}_S.pfm"), j(f"{name}_B.pfm"), mask)

    static = write_pair("static", scene.static[1], scene.static[0])
    target = write_pair("target", *scene.target)
    pairs = [write_pair(f"pair{i}", *p) for i, p in enumerate(scene.others)]
    io.write_pfm(j("truth_static.pfm"), scene.background)
    with open(j("degradation.json"), "w") as f:
        json.dump({**deg.to_dict(), "grid": list(grid), "calib_patch": calib_patch,
                   "seed": seed}, f, indent=2, sort_keys=True)
    cm = SceneManifest(os.path.join(clean_dir, "scene.json"), width, height, clean["static"],
                       clean["target"], [clean[f"pair{i}"] for i in range(len(pairs))])
    cm.save()
    m = SceneManifest(j("scene.json"), width, height, static, target, pairs,
                      lightbox=PairEntry(j("lightbox_S.pfm"), j("lightbox_B.pfm")),
                      pattern=pattern,
                      truth={"degradation": j("degradation.json"),
                             "static_linear": j("truth_static.pfm")},
                      extra={"clean_manifest": os.path.join("clean", "scene.json")})
    m.save()
    return m


# --- post-processing ----------------------------------------------------------

@dataclass
class Processed:
    name: str
    entry: PairEntry
    sharp_rgb: np.ndarray
    blur_rgb: np.ndarray         # corrected, not yet warped
    naive_sharp: np.ndarray      # ISP only, no colour/photometric correction
    naive_blur: np.ndarray
    beta: tuple


def _load_raw(path) -> BayerImage:
    img = io.load_image(path)
    if not isinstance(img, BayerImage):
        raise ImageError(f"{path}: expected a Bayer RAW capture (PFM with a pattern sidecar)")
    return img


def _const_error(fit: calib.ColorCalibration, truth: calib.ColorCalibration, sites) -> float:
    ref = calib.reference_to(truth, sites)
    return float(max(np.linalg.norm(fit.coeffs[c] - ref.coeffs[c]) / np.linalg.norm(ref.coeffs[c])
                     for c in range(3)))


def _crop(a, sl):
    return a[sl[0], sl[1]]


def run_pipeline(manifest: SceneManifest, cfg: dict | None = None, out_dir=None,
                 jobs: int = 1) -> dict:
    cfg = cfg or DEFAULTS
    if manifest.lightbox is None:
        raise ManifestError("pipeline needs the light-box captures for colour calibration")
    gain_source = cfg["photometric"]["gain_source"]
    if gain_source not in GAIN_SOURCES:
        raise ValueError(f"unknown gain source {gain_source!r}")
    nx, ny = cfg["calib"]["grid"]
    psz = int(cfg["calib"]["patch_size"])
    isp = IspPipeline(IspConfig.from_mapping(cfg["isp"]))

    lb_s, lb_b = _load_raw(manifest.lightbox.sharp), _load_raw(manifest.lightbox.blur)
    cal_s = calib.calibrate_from_flat(lb_s, nx, ny, psz)
    cal_b = calib.calibrate_from_flat(lb_b, nx, ny, psz)
    lb_beta = calib.photometric_gain(calib.color_correct(lb_b, cal_b),
                                     calib.color_correct(lb_s, cal_s)).beta

    static_beta = None
    if gain_source == "static":
        s0 = calib.color_correct(_load_raw(manifest.static.sharp), cal_s)
        b0 = calib.color_correct(_load_raw(manifest.static.blur), cal_b)
        static_beta = calib.photometric_gain(b0, s0).beta

    def develop(item) -> Processed:
        name, entry = item
        rs, rb = _load_raw(entry.sharp), _load_raw(entry.blur)
        cs, cb = calib.color_correct(rs, cal_s), calib.color_correct(rb, cal_b)
        if gain_source == "lightbox":
            beta = lb_beta
        elif gain_source == "static":
            beta = static_beta
        else:
            beta = calib.photometric_gain(cb, cs).beta
        cb = calib.apply_gain(cb, beta)
        return Processed(name, entry, isp(cs), isp(cb), isp(rs), isp(rb), tuple(beta))

    developed = _map(develop, manifest.all_pairs(), jobs)
    static = developed[0]
    ac = cfg["align"]
    flow = geoalign.estimate_flow(static.sharp_rgb, static.blur_rgb, ac["levels"], ac["block"], ac["step"])
    inner = geoalign.interior(flow, pad=2)

    def finish(p: Processed) -> dict:
        aligned, _ = geoalign.warp(p.blur_rgb, flow)
        naive_aligned, _ = geoalign.warp(p.naive_blur, flow)
        s = _crop(p.sharp_rgb, inner)
        row = {
            "name": p.name,
            "beta": list(p.beta),
            "delta_L_before": calib.delta_L(_crop(naive_aligned, inner), _crop(p.naive_sharp, inner)),
            "delta_L_after": calib.delta_L(_crop(aligned, inner), s),
            "psnr_before": metrics.psnr(s, _crop(p.blur_rgb, inner)),
            "psnr_after": metrics.psnr(s, _crop(aligned, inner)),
        }
        row["delta_L_decreased"] = row["delta_L_after"] <= row["delta_L_before"]
        if out_dir is not None:
            ps = os.path.join(out_dir, f"{p.name}_S.pfm")
            pb = os.path.join(out_dir, f"{p.name}_B.pfm")
            io.save_image(p.sharp_rgb, ps)
            io.save_image(aligned, pb)
            row["_entry"] = PairEntry(ps, pb, p.entry.mask)
        return row, aligned

    finished = _map(finish, developed, jobs)
    rows = [r for r, _ in finished]
    static_aligned = finished[0][1]
    s_in = _crop(static.sharp_rgb, inner)
    geom_before = geoalign.geometric_error(s_in, _crop(static.blur_rgb, inner))
    geom_after = geoalign.geometric_error(s_in, _crop(static_aligned, inner))

    report = {
        "scene": os.path.abspath(manifest.path),
        "size": [manifest.width, manifest.height],
        "calibration": {
            "grid": [nx, ny], "patch_size": psz,
            "residual_rms": {"S": cal_s.residual_rms.tolist(), "B": cal_b.residual_rms.tolist()},
        },
        "photometric": {"gain_source": gain_source, "beta_lightbox": list(lb_beta)},
        "geometry": {
            "flow_mean": [float(flow.u.mean()), float(flow.v.mean())],
            "interior": [inner[1].start, inner[0].start, inner[1].stop, inner[0].stop],
            "geometric_error_before": geom_before,
            "geometric_error_after": geom_after,
            "psnr_before": rows[0]["psnr_before"],
            "psnr_after": rows[0]["psnr_after"],
        },
        "pairs": [{k: v for k, v in r.items() if not k.startswith("_")} for r in rows],
    }
    checks = {
        "delta_L_decreased_all": all(r["delta_L_decreased"] for r in rows),
        "geometric_error_le_1px": geom_after <= GEOM_TOL,
        "psnr_gain_ge_10dB": rows[0]["psnr_after"] - rows[0]["psnr_before"] >= PSNR_GAIN,
    }
    if manifest.truth.get("degradation"):
        checks.update(_truth_checks(manifest, report, cal_s, cal_b, lb_beta, nx, ny, psz))
    report["checks"] = checks
    report["passed"] = all(checks.values())

    if out_dir is not None:
        cal_s.save(os.path.join(out_dir, "calib_S.json"))
        cal_b.save(os.path.join(out_dir, "calib_B.json"))
        io.save_flow(flow, os.path.join(out_dir, "flow.pfm"))
        ents = [r["_entry"] for r in rows]
        SceneManifest(os.path.join(out_dir, "scene.json"), manifest.width, manifest.height,
                      ents[0], ents[1], ents[2:]).save()
    return report


def _truth_checks(manifest, report, cal_s, cal_b, beta, nx, ny, psz) -> dict:
    from .manifest import load_json
    deg = capture_sim.Degradation.from_dict(load_json(manifest.truth["degradation"]))
    shape = (manifest.height, manifest.width)
    sites = calib.target_sites(shape, nx, ny, psz, deg.pattern)
    err_s = _const_error(cal_s, deg.cast_sharp, sites)
    err_b = _const_error(cal_b, deg.cast_blur, sites)
    gain_err = float(np.max(np.abs(np.asarray(beta) * np.asarray(deg.gains) - 1.0)))
    truth = {"constant_error_S": err_s, "constant_error_B": err_b,
             "gain_recovery_error": gain_err, "injected_gains": list(deg.gains),
             "injected_misalignment": list(deg.misalignment)}
    img_err = None
    if manifest.truth.get("static_linear"):
        lin = io.read_pfm(manifest.truth["static_linear"])
        raw_s = _load_raw(manifest.static.sharp)
        raw_b = _load_raw(manifest.static.blur)
        want_s = mosaic(lin, deg.pattern).data
        shifted, _ = capture_sim.inject_misalignment(lin, *deg.misalignment)
        want_b = mosaic(shifted, deg.pattern).data
        got_s = calib.color_correct(raw_s, cal_s).data
        got_b = calib.apply_gain(calib.color_correct(raw_b, cal_b), beta).data
        img_err = float(max(np.abs(got_s - want_s).max(), np.abs(got_b - want_b).max()))
        truth["corrected_max_abs_error"] = img_err
    report["truth"] = truth
    out = {"color_constants_1e-6": max(err_s, err_b) <= COLOR_TOL,
           "gains_1e-6": gain_err <= GAIN_TOL}
    if img_err is not None:
        out["corrected_image_1e-5"] = img_err < IMAGE_TOL
    return out
