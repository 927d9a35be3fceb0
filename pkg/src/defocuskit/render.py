"""Synthetic rendering: calibration targets, blur maps, layered refocusing.

Pixel coordinates are continuous: pixel (row i, column j) covers the unit
square with center (j + 0.5, i + 0.5).  Patterns render fronto-parallel
through a pinhole with focal length given in output pixels, so a feature of
physical size w at distance d spans w * f_pix / d pixels.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .calib import CircleObservation
from .errors import DomainError
from .optics import BlurModel, sigma_from_depth
from .psf import compose_sigmas, convolve, convolve_array, make_kernel
from .raster import BlurMap, DepthMap, Image, save_blur, save_depth, save_image

# Rendering rasterizes disks on a finer grid, then box-averages down, which
# antialiases edges at roughly a quarter-pixel scale.
SUPERSAMPLE = 4


@dataclass(frozen=True)
class PatternSpec:
    """Asymmetric circle grid: odd rows shift by half the in-row pitch.

    diagonal_spacing is the center distance between nearest neighbours
    (which are the diagonal ones); diameter is the physical circle size.
    Defaults give the classic 11x4 = 44 circle board.
    """

    rows: int = 11
    cols: int = 4
    diameter: float = 0.04
    diagonal_spacing: float = 0.08

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise DomainError("PatternSpec needs at least 2 rows and 2 cols")
        if self.diameter <= 0.0:
            raise DomainError("PatternSpec.diameter must be > 0")
        if self.diagonal_spacing <= self.diameter:
            raise DomainError("PatternSpec circles must not touch: spacing > diameter")

    @property
    def count(self):
        return self.rows * self.cols


def _pattern_centers(spec: PatternSpec) -> np.ndarray:
    """(N, 2) circle centers in meters, row-major, asymmetric lattice."""
    a = spec.diagonal_spacing / math.sqrt(2.0)
    pts = [
        ((2 * j + (i % 2)) * a, i * a)
        for i in range(spec.rows)
        for j in range(spec.cols)
    ]
    return np.asarray(pts, dtype=float)


def render_pattern(spec: PatternSpec, distance: float, f_pix: float,
                   width: int, height: int):
    """Rasterize dark circles on a light field; returns (Image, truth).

    truth is the row-major list of CircleObservation ground truth (centers
    and radius in pixels, distance filled in).  Raises DomainError when the
    projected pattern does not fit or circles project below 2 px radius.
    """
    if distance <= 0.0 or f_pix <= 0.0:
        raise DomainError("distance and f_pix must be > 0")
    if width < 4 or height < 4:
        raise DomainError("image must be at least 4x4")

    scale = f_pix / distance
    centers = _pattern_centers(spec)
    half_d = spec.diameter / 2.0
    lo = centers.min(axis=0) - half_d
    hi = centers.max(axis=0) + half_d
    need_w = int(math.ceil((hi[0] - lo[0]) * scale))
    need_h = int(math.ceil((hi[1] - lo[1]) * scale))
    if need_w > width or need_h > height:
        raise DomainError(
            "pattern projects to %dx%d px, image is only %dx%d" % (need_w, need_h, width, height)
        )
    radius_px = half_d * scale
    if radius_px <= 2.0:
        raise DomainError("circles project to %.2f px radius, need > 2" % radius_px)

    mid = (lo + hi) / 2.0
    cx = (centers[:, 0] - mid[0]) * scale + width / 2.0
    cy = (centers[:, 1] - mid[1]) * scale + height / 2.0

    s = SUPERSAMPLE
    canvas = np.ones((height * s, width * s), dtype=np.float32)
    r_s = radius_px * s
    for k in range(len(cx)):
        cxs = cx[k] * s
        cys = cy[k] * s
        x0 = max(0, int(math.floor(cxs - r_s)))
        x1 = min(width * s, int(math.ceil(cxs + r_s)) + 1)
        y0 = max(0, int(math.floor(cys - r_s)))
        y1 = min(height * s, int(math.ceil(cys + r_s)) + 1)
        xs = np.arange(x0, x1, dtype=np.float64) + 0.5 - cxs
        ys = np.arange(y0, y1, dtype=np.float64) + 0.5 - cys
        inside = (ys[:, None] ** 2 + xs[None, :] ** 2) <= r_s * r_s
        patch = canvas[y0:y1, x0:x1]
        patch[inside] = 0.0
    img = canvas.reshape(height, s, width, s).mean(axis=(1, 3))

    truth = [
        CircleObservation(x=float(cx[k]), y=float(cy[k]), radius=float(radius_px),
                          distance=float(distance))
        for k in range(len(cx))
    ]
    return Image(img), truth


def render_calibration_pair(spec: PatternSpec, distance: float, model: BlurModel,
                            f_pix: float, width: int, height: int):
    """Render the same board twice: at the camera's intrinsic blur, and
    defocused as seen from the given distance.  Returns (focused, defocused,
    truth)."""
    base, truth = render_pattern(spec, distance, f_pix, width, height)
    focused = convolve(base, make_kernel(model.gamma))
    lam = compose_sigmas(sigma_from_depth(distance, model), model.gamma)
    defocused = convolve(base, make_kernel(lam))
    return focused, defocused, truth


def blur_map_from_depth(depth: DepthMap, model: BlurModel) -> BlurMap:
    """Total observable blur per pixel: sqrt(sigma(s2)^2 + gamma^2).

    Invalid depth pixels stay invalid in the blur map.
    """
    d = depth.data.astype(np.float64)
    out = np.full(d.shape, np.nan, dtype=np.float64)
    m = depth.mask
    sig = model.kcam * np.abs(model.s1 - d[m]) / d[m]
    out[m] = np.hypot(sig, model.gamma)
    return BlurMap(out.astype(np.float32))


def refocus(rgb: Image, depth: DepthMap, model: BlurModel, layers: int = 16) -> Image:
    """Depth-dependent blur via layered compositing.

    The scene is split into depth bins equally spaced in inverse depth
    (defocus is close to linear in 1/s2, so equal bins equalize the blur
    quantization error).  Each layer's color and coverage mask are blurred
    with that layer's kernel, then the layers are blended back to front.
    Pixels no layer claims (invalid depth, disocclusions) fall through to
    the unblurred input.
    """
    if rgb.height != depth.height or rgb.width != depth.width:
        raise DomainError("rgb and depth dimensions must match")
    if layers < 2:
        raise DomainError("refocus needs at least 2 layers")

    valid = depth.mask
    if not valid.any():
        return Image(rgb.data.copy())

    inv = np.zeros(depth.data.shape, dtype=np.float64)
    inv[valid] = 1.0 / depth.data[valid].astype(np.float64)
    lo = inv[valid].min()
    hi = inv[valid].max()

    # Each pixel's weight is split linearly between the two bins whose
    # centers bracket its inverse depth.  Soft assignment keeps the layer
    # decomposition continuous in depth, so adding layers converges instead
    # of reshuffling pixels across hard bin edges.
    if hi - lo < 1e-12:
        nbins = 1
        b_lo = np.zeros(depth.data.shape, dtype=np.int32)
        b_hi = b_lo
        w_hi = np.zeros(depth.data.shape, dtype=np.float64)
    else:
        nbins = layers
        step = (hi - lo) / nbins
        pos = (inv - lo) / step - 0.5
        b_lo = np.floor(pos).astype(np.int32)
        w_hi = pos - b_lo
        b_hi = np.clip(b_lo + 1, 0, nbins - 1)
        b_lo = np.clip(b_lo, 0, nbins - 1)
        # past either end both indices clip to the same bin and the weights
        # still sum to one, no special casing needed
    w_lo = 1.0 - w_hi

    color = rgb.data.astype(np.float64)
    chan = (slice(None), slice(None), None) if color.ndim == 3 else (slice(None), slice(None))

    # Nearest layer first.  Each blurred layer deposits its premultiplied
    # color into whatever per-pixel opacity is still unclaimed; once a near
    # layer saturates a pixel, farther layers cannot bleed through it.  Where
    # no layer overlaps a surface, the weights form a partition of unity and
    # the caps never bind, so the blend degenerates to an exact sum.
    acc = np.zeros_like(color)
    used = np.zeros(depth.data.shape, dtype=np.float64)
    for b in range(nbins - 1, -1, -1):
        mask = np.zeros(depth.data.shape, dtype=np.float64)
        sel_lo = valid & (b_lo == b)
        sel_hi = valid & (b_hi == b)
        mask[sel_lo] += w_lo[sel_lo]
        mask[sel_hi] += w_hi[sel_hi]
        total = mask.sum()
        if total <= 0.0:
            continue
        d_rep = 1.0 / ((mask * inv).sum() / total)
        lam = math.hypot(sigma_from_depth(d_rep, model), model.gamma)
        kern = make_kernel(lam)
        layer_color = convolve_array(color * mask[chan], kern)
        layer_mass = convolve_array(mask, kern)
        room = np.clip(1.0 - used, 0.0, None)
        scale = np.ones_like(layer_mass)
        over = layer_mass > room
        scale[over] = room[over] / layer_mass[over]
        acc += layer_color * scale[chan]
        used += layer_mass * scale

    out = acc + np.clip(1.0 - used, 0.0, None)[chan] * color
    np.clip(out, 0.0, 1.0, out=out)
    return Image(out.astype(np.float32))


def write_dataset_sample(stem, rgb: Image, depth: DepthMap, model: BlurModel,
                         layers: int = 16) -> list:
    """Write one training triplet: <stem>.png (refocused), <stem>_depth.pfm,
    <stem>_blur.pfm, plus meta.txt beside them describing the camera."""
    stem = str(stem)
    blurred = refocus(rgb, depth, model, layers=layers)
    paths = [stem + ".png", stem + "_depth.pfm", stem + "_blur.pfm"]
    save_image(blurred, paths[0])
    save_depth(depth, paths[1])
    save_blur(blur_map_from_depth(depth, model), paths[2])
    meta = os.path.join(os.path.dirname(stem) or ".", "meta.txt")
    with open(meta, "w", encoding="ascii") as fh:
        fh.write("kcam=%.10g\n" % model.kcam)
        fh.write("gamma_px=%.10g\n" % model.gamma)
        fh.write("s1_m=%.10g\n" % model.s1)
    paths.append(meta)
    return paths
