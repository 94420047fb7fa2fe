import json

import numpy as np
import pytest

from localblur import cli, io
from localblur.capture_sim import textured_background


def call(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert cli.run(["simulate", "--out", str(out), "--seed", "3", "--width", "320", "--height", "256",
                    "--sprite-size", "40", "--frames", "10", "--no-timestamp"]) == 0
    return out


def test_simulate_layout(scene):
    m = json.loads((scene / "scene.json").read_text())
    assert m["width"] == 320 and {"static", "target", "pairs", "lightbox"} <= set(m)
    assert (scene / "degradation.json").exists()


def test_pipeline_report(scene, tmp_path, capsys):
    code, rep, _ = call(capsys, "pipeline", "--manifest", scene / "scene.json", "--out", tmp_path,
                        "--no-timestamp", "--figures", tmp_path / "fig")
    assert code == 0 and rep["schema_version"] == 1 and rep["command"] == "pipeline"
    res = rep["result"]
    assert res["passed"] and all(res["checks"].values())
    assert list((tmp_path / "fig").glob("*.png"))


def test_report_deterministic(scene, tmp_path, capsys):
    args = ["gen-mask", "--manifest", scene / "scene.json", "--out", tmp_path / "m.png", "--no-timestamp"]
    a = call(capsys, *args)[1]
    b = call(capsys, *args)[1]
    assert a == b and "timestamp" not in a
    stamped = call(capsys, *args[:-1])[1]
    assert "timestamp" in stamped and "elapsed_s" in stamped
    assert a["result"]["iou_vs_manifest_mask"] >= 0.8


def test_evaluate_identity(tmp_path, capsys):
    img = textured_background(np.random.default_rng(0), 40, 48)
    io.save_image(img, tmp_path / "a.pfm")
    mask = np.zeros((40, 48))
    mask[10:20, 10:30] = 1
    io.write_mask_png(tmp_path / "m.png", mask)
    code, rep, _ = call(capsys, "evaluate", "--gt", tmp_path / "a.pfm", "--pred", tmp_path / "a.pfm",
                        "--mask", tmp_path / "m.png", "--report", tmp_path / "r.json")
    assert code == 0
    row = rep["result"]["aggregate"]
    assert (row["PSNR"], row["SSIM"], row["SSIM_w"], row["PSNR_a"]) == (100, 1, 1, 100)
    assert json.loads((tmp_path / "r.json").read_text()) == rep


def test_synth_and_crop(tmp_path, capsys):
    img = textured_background(np.random.default_rng(1), 280, 300)
    io.save_image(img, tmp_path / "s.png")
    mask = np.zeros((280, 300))
    mask[100:140, 120:180] = 1
    io.write_mask_png(tmp_path / "m.png", mask)
    code, rep, _ = call(capsys, "synth-blur", "--input", tmp_path / "s.png", "--mask", tmp_path / "m.png",
                        "--magnitude", 8, "--out", tmp_path / "b.png", "--mask-out", tmp_path / "used.png")
    assert code == 0 and (tmp_path / "used.png").exists()
    code, rep, _ = call(capsys, "crop", "--mask", tmp_path / "m.png", "--count", 50, "--seed", 4,
                        "--out", tmp_path / "p.jsonl")
    lines = [json.loads(x) for x in (tmp_path / "p.jsonl").read_text().splitlines()]
    assert code == 0 and len(lines) == 50
    assert {"image", "x", "y", "flip_h", "flip_v"} <= set(lines[0])


def test_loss_check(capsys):
    code, rep, _ = call(capsys, "loss-check", "--size", 16, "--no-timestamp")
    assert code == 0
    g = rep["result"]["grad_check"]
    assert g["ssim"]["max_rel_error"] is None
    assert g["mse"]["max_rel_error"] < 1e-5 and g["msfr"]["max_rel_error"] < 1e-4


def test_calibrate_and_correct(tmp_path, capsys):
    flat = np.full((96, 128, 3), 0.5)
    yy, xx = np.mgrid[0:96, 0:128] / 128.0
    flat = flat * (1 - 0.2 * (xx - 0.5) ** 2)[:, :, None]
    io.save_image(flat, tmp_path / "flat.pfm")
    code, _, _ = call(capsys, "calibrate-color", "--flat", tmp_path / "flat.pfm", "--patch-size", 4,
                      "--out", tmp_path / "c.json")
    assert code == 0
    code, _, _ = call(capsys, "correct", "--input", tmp_path / "flat.pfm", "--calib", tmp_path / "c.json",
                      "--out", tmp_path / "o.pfm")
    assert code == 0
    assert io.load_image(tmp_path / "o.pfm").std() < flat.std() / 5


def test_exit_codes(tmp_path, capsys):
    code, _, err = call(capsys, "pipeline", "--manifest", tmp_path / "nope.json", "--out", tmp_path)
    assert code == 2 and json.loads(err)["error"]["type"] == "FileNotFoundError"
    code, _, _ = call(capsys, "loss-check", "--set", "bogus.key=1")
    assert code == 1
    with pytest.raises(SystemExit) as e:
        cli.run(["no-such-command"])
    assert e.value.code == 1
    capsys.readouterr()
