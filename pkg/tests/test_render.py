import math

import numpy as np
import pytest

from defocuskit import (
    BlurModel,
    DepthMap,
    DomainError,
    Image,
    PatternSpec,
    blur_map_from_depth,
    load_blur,
    load_depth,
    load_image,
    make_kernel,
    refocus,
    render_calibration_pair,
    render_pattern,
    sigma_from_depth,
    write_dataset_sample,
)
from defocuskit.psf import convolve_array

SPEC = PatternSpec()  # 11 x 4 asymmetric grid


def test_pattern_spec_invariants():
    with pytest.raises(DomainError):
        PatternSpec(rows=1, cols=4)
    with pytest.raises(DomainError):
        PatternSpec(diameter=0.0)
    with pytest.raises(DomainError):
        PatternSpec(diameter=0.09, diagonal_spacing=0.08)


def test_render_pattern_projected_radius():
    """Pinhole similar triangles: radius_px = (diameter/2) * f_pix / distance."""
    img, truth = render_pattern(SPEC, 1.0, 1000.0, 760, 700)
    assert len(truth) == SPEC.rows * SPEC.cols == 44
    assert all(o.radius == pytest.approx(20.0, rel=1e-12) for o in truth)
    assert all(o.distance == 1.0 for o in truth)

    _, far_truth = render_pattern(SPEC, 2.0, 1000.0, 760, 700)
    assert far_truth[0].radius == pytest.approx(10.0, rel=1e-12)


def test_render_pattern_neighbor_spacing():
    # closest centers in an asymmetric grid sit one diagonal_spacing apart
    _, truth = render_pattern(SPEC, 1.0, 1000.0, 760, 700)
    pts = np.array([(o.x, o.y) for o in truth])
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nn = np.sqrt(d2.min(axis=1))
    expected = SPEC.diagonal_spacing * 1000.0 / 1.0
    assert np.allclose(nn, expected, rtol=1e-6)


def test_render_pattern_intensities():
    img, truth = render_pattern(SPEC, 1.0, 1000.0, 760, 700)
    assert img.data.max() == 1.0, "background is light"
    assert img.data.min() == 0.0, "circle cores are dark"
    cy, cx = int(truth[0].y), int(truth[0].x)
    assert img.data[cy, cx] == 0.0


def test_render_pattern_overflow_names_sizes():
    with pytest.raises(DomainError) as exc:
        render_pattern(SPEC, 1.0, 1000.0, 100, 100)
    assert "projects to" in str(exc.value)


def test_render_pattern_tiny_circles_rejected():
    with pytest.raises(DomainError):
        render_pattern(SPEC, 50.0, 1000.0, 760, 700)  # sub-pixel circles


def test_calibration_pair_gamma_zero_is_sharp():
    model = BlurModel(kcam=10.0, gamma=0.0, s1=2.0)
    sharp, _ = render_pattern(SPEC, 1.0, 1000.0, 760, 700)
    focused, defocused, _ = render_calibration_pair(SPEC, 1.0, model, 1000.0, 760, 700)
    assert np.array_equal(focused.data, sharp.data)
    assert not np.array_equal(defocused.data, sharp.data)


def test_calibration_pair_at_focus_distance():
    model = BlurModel(kcam=10.0, gamma=1.0, s1=1.0)
    focused, defocused, _ = render_calibration_pair(SPEC, 1.0, model, 1000.0, 760, 700)
    assert np.array_equal(focused.data, defocused.data), "sigma = 0 at the focus plane"


def test_blur_map_constants():
    model = BlurModel(kcam=10.0, gamma=1.5, s1=2.0)
    at_focus = blur_map_from_depth(DepthMap(np.full((4, 6), 2.0, np.float32)), model)
    assert np.allclose(at_focus.data, 1.5, rtol=1e-6)

    g0 = BlurModel(kcam=10.0, gamma=0.0, s1=2.0)
    away = blur_map_from_depth(DepthMap(np.full((4, 6), 4.0, np.float32)), g0)
    assert np.allclose(away.data, sigma_from_depth(4.0, g0), rtol=1e-6)


def test_blur_map_two_planes():
    model = BlurModel(kcam=10.0, gamma=1.0, s1=2.0)
    d = np.full((4, 8), 1.0, np.float32)
    d[:, 4:] = 4.0
    bm = blur_map_from_depth(DepthMap(d), model)
    assert np.allclose(bm.data[:, :4], math.sqrt(101.0), rtol=1e-6)  # 10.0499
    assert np.allclose(bm.data[:, 4:], math.sqrt(26.0), rtol=1e-6)  # 5.0990


def test_blur_map_invalid_propagates():
    model = BlurModel(kcam=10.0, gamma=1.0, s1=2.0)
    d = np.array([[1.0, np.nan]], np.float32)
    bm = blur_map_from_depth(DepthMap(d), model)
    assert bm.mask.tolist() == [[True, False]]


def test_blur_map_monotone_in_inverse_depth_gap():
    rng = np.random.default_rng(12)
    model = BlurModel(kcam=22.67, gamma=1.0, s1=2.0)
    for _ in range(100):
        side = rng.choice([True, False])
        if side:
            d1, d2 = sorted(rng.uniform(0.2, 2.0, size=2), reverse=True)  # nearer side
        else:
            d1, d2 = sorted(rng.uniform(2.0, 20.0, size=2))
        gap1 = abs(model.s1 - d1) / d1
        gap2 = abs(model.s1 - d2) / d2
        if gap1 >= gap2:
            continue
        bm = blur_map_from_depth(DepthMap(np.array([[d1, d2]], np.float32)), model)
        assert bm.data[0, 0] < bm.data[0, 1]


# ---------------------------------------------------------------------------
# refocus

def test_refocus_preconditions():
    img = Image(np.zeros((4, 4), np.float32))
    model = BlurModel(kcam=10.0, gamma=0.0, s1=2.0)
    with pytest.raises(DomainError):
        refocus(img, DepthMap(np.ones((5, 4), np.float32)), model)
    with pytest.raises(DomainError):
        refocus(img, DepthMap(np.ones((4, 4), np.float32)), model, layers=1)


def test_refocus_in_focus_identity():
    rng = np.random.default_rng(6)
    img = Image(rng.random((20, 24), np.float32).astype(np.float32))
    model = BlurModel(kcam=10.0, gamma=0.0, s1=1.5)
    out = refocus(img, DepthMap(np.full((20, 24), 1.5, np.float32)), model)
    assert np.array_equal(out.data, img.data)


def test_refocus_constant_depth_matches_global_convolution():
    rng = np.random.default_rng(7)
    img = Image(rng.random((48, 64, 3)).astype(np.float32))
    model = BlurModel(kcam=22.67, gamma=1.0, s1=2.0)
    out = refocus(img, DepthMap(np.full((48, 64), 1.3, np.float32)), model, layers=16)
    lam = math.hypot(sigma_from_depth(1.3, model), model.gamma)
    ref = convolve_array(img.data.astype(np.float64), make_kernel(lam))
    diff = np.abs(out.data - np.clip(ref, 0.0, 1.0)).max()
    assert diff < 1e-4, "constant scene must reduce to one global blur (%.2e)" % diff


def test_refocus_two_plane_variance_drops():
    h, w = 60, 120
    tex = 0.5 + 0.45 * np.sin(np.arange(w) / 2.0)
    img = Image(np.tile(tex, (h, 1)).astype(np.float32))
    d = np.full((h, w), 1.0, np.float32)
    d[:, 60:] = 3.0
    model = BlurModel(kcam=22.67, gamma=0.0, s1=1.0)  # focused on the near plane
    out = refocus(img, DepthMap(d), model, layers=16)
    far = (slice(None), slice(70, 115))
    assert out.data[far].var() < img.data[far].var() * 0.1
    near = (slice(None), slice(5, 50))
    assert np.allclose(out.data[near], img.data[near], atol=1e-6)


def test_refocus_layer_doubling_converges():
    h, w = 120, 160
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dm = DepthMap((1.0 + xx / (w - 1)).astype(np.float32))
    tex = 0.5 + 0.4 * np.sin(xx / 9.0) * np.cos(yy / 7.2)
    img = Image(tex.astype(np.float32))
    model = BlurModel(kcam=10.0, gamma=0.8, s1=2.0)
    a = refocus(img, dm, model, layers=16)
    b = refocus(img, dm, model, layers=32)
    diff = np.abs(a.data.astype(np.float64) - b.data.astype(np.float64)).max()
    print("doubling max diff %.2e" % diff)
    assert diff < 5e-3


def test_refocus_energy_conserved_interior():
    rng = np.random.default_rng(8)
    h, w = 120, 160
    xx = np.mgrid[0:h, 0:w][1].astype(np.float64)
    dm = DepthMap((1.0 + xx / (w - 1)).astype(np.float32))
    img = Image(rng.random((h, w, 3)).astype(np.float32))
    out = refocus(img, dm, BlurModel(kcam=10.0, gamma=0.8, s1=2.0), layers=16)
    crop = (slice(20, -20), slice(20, -20))
    assert out.data[crop].mean() == pytest.approx(img.data[crop].mean(), abs=1e-3)


def test_refocus_invalid_depth_passes_through():
    rng = np.random.default_rng(9)
    img = Image(rng.random((10, 12), np.float32).astype(np.float32))
    model = BlurModel(kcam=10.0, gamma=1.0, s1=2.0)
    out = refocus(img, DepthMap(np.full((10, 12), np.nan, np.float32)), model)
    assert np.array_equal(out.data, img.data)


def test_write_dataset_sample(tmp_path):
    rng = np.random.default_rng(10)
    img = Image(rng.random((32, 40, 3)).astype(np.float32))
    depth = DepthMap(rng.uniform(0.5, 2.0, size=(32, 40)).astype(np.float32))
    model = BlurModel(kcam=8.79, gamma=1.0, s1=2.0)
    stem = tmp_path / "sample"
    paths = write_dataset_sample(stem, img, depth, model)
    assert [p.split("/")[-1] for p in paths] == [
        "sample.png",
        "sample_depth.pfm",
        "sample_blur.pfm",
        "meta.txt",
    ]
    assert load_image(paths[0]).data.shape == (32, 40, 3)
    assert load_depth(paths[1]).data.tobytes() == depth.data.tobytes()
    expect = blur_map_from_depth(depth, model)
    assert load_blur(paths[2]).data.tobytes() == expect.data.tobytes()
    meta = (tmp_path / "meta.txt").read_text()
    assert "kcam=8.79" in meta and "gamma_px=1" in meta and "s1_m=2" in meta
