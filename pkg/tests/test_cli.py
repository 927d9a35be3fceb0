import math

import numpy as np
import pytest

from defocuskit import (
    BlurModel,
    DepthMap,
    blur_map_from_depth,
    kcam_from_params,
    load_camera_file,
    load_depth,
    load_image,
    save_blur,
    save_depth,
    save_image,
    sigma_from_depth,
    Image,
)
from defocuskit.cli import main

WORKSHEET_TEXT = """\
f_mm = 50
N = 1.8
p_um = 4.2
out_pix = 4000
sensor_pix = 4000
s1_m = 2.0
kr = 1
gamma_px = 1.0
"""

# a gentle desk camera: kcam ~ 1.98, f_pix = 1250
DESK_TEXT = """\
f_mm = 25
N = 8
p_um = 20
out_pix = 1000
sensor_pix = 1000
s1_m = 2.0
kr = 1
gamma_px = 1.0
"""


@pytest.fixture
def worksheet(tmp_path):
    path = tmp_path / "worksheet.txt"
    path.write_text(WORKSHEET_TEXT)
    return str(path)


@pytest.fixture
def desk(tmp_path):
    path = tmp_path / "desk.txt"
    path.write_text(DESK_TEXT)
    return str(path)


def test_kcam_prints_two_decimals(worksheet, capsys):
    assert main(["kcam", "--params", worksheet]) == 0
    assert capsys.readouterr().out.strip() == "169.58"


def test_kcam_missing_key_exits_2(tmp_path, capsys):
    broken = tmp_path / "broken.txt"
    broken.write_text(WORKSHEET_TEXT.replace("f_mm = 50\n", ""))
    assert main(["kcam", "--params", str(broken)]) == 2
    assert "f_mm" in capsys.readouterr().err


def test_usage_errors_exit_2(worksheet):
    with pytest.raises(SystemExit) as exc:
        main(["kcam"])  # --params is required
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_curve_csv(worksheet, tmp_path, capsys):
    out = tmp_path / "curve.csv"
    rc = main(["curve", "--params", worksheet, "--s2-min", "1.0",
               "--s2-max", "3.0", "--steps", "5", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "s2_m,sigma_px"
    assert len(lines) == 6
    rows = [tuple(float(v) for v in ln.split(",")) for ln in lines[1:]]
    assert rows[0][0] == 1.0 and rows[-1][0] == 3.0
    by_depth = dict(rows)
    assert by_depth[2.0] == 0.0, "the focus distance must sit on the curve at zero"
    params, _ = load_camera_file(worksheet)
    model = BlurModel(kcam=kcam_from_params(params), gamma=1.0, s1=2.0)
    assert rows[0][1] == pytest.approx(sigma_from_depth(1.0, model), rel=1e-6)

    out2 = tmp_path / "curve2.csv"
    main(["curve", "--params", worksheet, "--s2-min", "1.0",
          "--s2-max", "3.0", "--steps", "5", "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes(), "curve emission must be deterministic"


def test_curve_bad_range_exits_2(worksheet, tmp_path, capsys):
    rc = main(["curve", "--params", worksheet, "--s2-min", "3.0",
               "--s2-max", "1.0", "--out", str(tmp_path / "x.csv")])
    assert rc == 2


def test_genpattern_single(tmp_path, capsys):
    out = tmp_path / "board.png"
    args = ["genpattern", "--distance-m", "1.0", "--f-pix", "1000",
            "--width", "760", "--height", "700", "--out", str(out)]
    assert main(args) == 0
    img = load_image(out)
    assert img.data.min() == 0.0 and img.data.max() == 1.0

    out2 = tmp_path / "board2.png"
    main(args[:-1] + [str(out2)])
    assert out.read_bytes() == out2.read_bytes()


def test_genpattern_needs_focal_length(tmp_path):
    rc = main(["genpattern", "--distance-m", "1.0", "--width", "100",
               "--height", "100", "--out", str(tmp_path / "x.png")])
    assert rc == 2


def test_genpattern_overflow_is_runtime_error(tmp_path, capsys):
    rc = main(["genpattern", "--distance-m", "1.0", "--f-pix", "1000",
               "--width", "64", "--height", "64", "--out", str(tmp_path / "x.png")])
    assert rc == 1
    assert "projects to" in capsys.readouterr().err


def test_refocus_and_dataset_writer(desk, tmp_path):
    rng = np.random.default_rng(13)
    rgb = tmp_path / "scene.png"
    dpt = tmp_path / "scene_depth_in.pfm"
    save_image(Image(rng.random((24, 30, 3)).astype(np.float32)), rgb)
    save_depth(DepthMap(rng.uniform(0.5, 2.0, size=(24, 30)).astype(np.float32)), dpt)

    out = tmp_path / "blurred.png"
    rc = main(["refocus", "--rgb", str(rgb), "--depth", str(dpt),
               "--params", desk, "--out", str(out)])
    assert rc == 0
    assert load_image(out).data.shape == (24, 30, 3)

    # --truth emits the full triplet next to the stem
    rc = main(["refocus", "--rgb", str(rgb), "--depth", str(dpt),
               "--params", desk, "--out", str(tmp_path / "sample.png"), "--truth"])
    assert rc == 0
    assert (tmp_path / "sample_depth.pfm").exists()
    assert (tmp_path / "sample_blur.pfm").exists()
    assert "kcam=" in (tmp_path / "meta.txt").read_text()


def test_refocus_on_garbage_input_exits_1(desk, tmp_path, capsys):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    rc = main(["refocus", "--rgb", str(bad), "--depth", str(bad),
               "--params", desk, "--out", str(tmp_path / "o.png")])
    assert rc == 1


def test_invert_metrics_round_trip(desk, tmp_path, capsys):
    rng = np.random.default_rng(14)
    params, gamma = load_camera_file(desk)
    model = BlurModel(kcam=kcam_from_params(params), gamma=gamma, s1=params.s1)
    gt = DepthMap(rng.uniform(0.5, 1.9, size=(20, 20)).astype(np.float32))
    gt_path = tmp_path / "gt.pfm"
    blur_path = tmp_path / "blur.pfm"
    save_depth(gt, gt_path)
    save_blur(blur_map_from_depth(gt, model), blur_path)

    pred_path = tmp_path / "pred.pfm"
    rc = main(["invert", "--blur", str(blur_path), "--params", desk,
               "--policy", "oracle", "--gt", str(gt_path), "--out", str(pred_path)])
    assert rc == 0

    rc = main(["metrics", "--pred", str(pred_path), "--gt", str(gt_path)])
    assert rc == 0
    got = dict(line.split("=") for line in capsys.readouterr().out.splitlines())
    assert float(got["rmse"]) < 1e-6
    assert float(got["delta1"]) == 1.0
    assert int(got["count"]) == 400


def test_metrics_perfect_prediction(tmp_path, capsys):
    rng = np.random.default_rng(15)
    gt = DepthMap(rng.uniform(0.5, 1.9, size=(8, 8)).astype(np.float32))
    path = tmp_path / "gt.pfm"
    save_depth(gt, path)
    rc = main(["metrics", "--pred", str(path), "--gt", str(path)])
    assert rc == 0
    got = dict(line.split("=") for line in capsys.readouterr().out.splitlines())
    for key in ("rel", "mse", "rmse", "log10"):
        assert float(got[key]) == 0.0
    for key in ("delta1", "delta2", "delta3"):
        assert float(got[key]) == 1.0


def test_sweep_csv_minimum_at_truth(desk, tmp_path):
    rng = np.random.default_rng(16)
    params, gamma = load_camera_file(desk)
    true_kcam = kcam_from_params(params)
    model = BlurModel(kcam=true_kcam, gamma=gamma, s1=params.s1)
    gt = DepthMap(rng.uniform(0.5, 1.9, size=(16, 16)).astype(np.float32))
    gt_path = tmp_path / "gt.pfm"
    blur_path = tmp_path / "blur.pfm"
    save_depth(gt, gt_path)
    save_blur(blur_map_from_depth(gt, model), blur_path)

    out = tmp_path / "sweep.csv"
    rc = main(["sweep", "--blur", str(blur_path), "--gt", str(gt_path),
               "--params", desk, "--kcam-min", "%.6f" % (0.7 * true_kcam),
               "--kcam-max", "%.6f" % (1.3 * true_kcam), "--steps", "13",
               "--policy", "oracle", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "kcam_px,rmse_m"
    rows = [tuple(float(v) for v in ln.split(",")) for ln in lines[1:]]
    assert len(rows) == 13
    best = min(rows, key=lambda kr: kr[1])
    assert best[0] == pytest.approx(true_kcam, rel=1e-6)


def test_full_pipeline_smoke(desk, tmp_path, capsys):
    """genpattern pair -> manifest -> calibrate recovers the camera's kcam."""
    pair_stem = tmp_path / "board.png"
    rc = main(["genpattern", "--distance-m", "1.0", "--params", desk,
               "--width", "620", "--height", "840", "--out", str(pair_stem)])
    assert rc == 0
    manifest = tmp_path / "pairs.txt"
    manifest.write_text("# one pair\nboard_focused.png board_defocused.png\n")

    out = tmp_path / "calib.txt"
    csv = tmp_path / "circles.csv"
    rc = main(["calibrate", "--manifest", str(manifest), "--params", desk,
               "--out", str(out), "--csv", str(csv)])
    assert rc == 0

    params, _ = load_camera_file(desk)
    true_kcam = kcam_from_params(params)
    report = dict(line.split("=") for line in out.read_text().splitlines())
    got = float(report["kcam_px"])
    captured = capsys.readouterr().out.strip()
    print("pipeline: true %.3f recovered %.3f" % (true_kcam, got))
    assert captured == "%.2f" % got
    assert got == pytest.approx(true_kcam, rel=0.10)
    assert int(report["n_estimates"]) >= 3
    assert csv.read_text().splitlines()[0] == (
        "pair,x_px,y_px,radius_px,distance_m,lambda_px,kcam_px"
    )
