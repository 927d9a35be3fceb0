"""Target-based calibration of the defocus gain kcam.

The target is a grid of dark circles on a light background.  Photographed
in focus it measures the camera's intrinsic blur gamma; photographed out of
focus at a known-ish distance it measures the total blur lambda.  The gain
follows from one subtraction and one division per circle:

    kcam = sqrt(lambda^2 - gamma^2) * s2 / |s1 - s2|

Blur is read off horizontal slices through each circle.  A slice, inverted
and scaled to [0, 1], is a flat top (circle interior) with a falling edge on
both sides.  Treating each edge as half of a Gaussian of std g, the two
sub-threshold edge integrals together reconstruct the full Gaussian area
g * sqrt(2 pi), which is solved for g.

One windowing detail carries most of the accuracy and is easy to get
wrong: each slice is cut off at the circle's geometric edge (the chord
endpoints), not at the end of the visible blur tail.  A blurred step edge
is an erf ramp, and integrating the whole ramp past the midpoint inflates
the estimate by about a third; stopping at the midpoint, where the erf has
spent half its area, lands within about a percent of the Gaussian-model
value.  The profile windows below are built accordingly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.optimize import curve_fit
from scipy.special import ndtr

from .errors import (
    CalibrationError,
    DegenerateProfileError,
    DomainError,
    InsufficientDataError,
)
from .raster import Image, rgb_to_gray

SQRT_2PI = math.sqrt(2.0 * math.pi)

# slices below this contrast carry no edge signal
MIN_CONTRAST = 1e-3

# defocus excess below this (pixels) is within the jitter of the edge
# integrals themselves; such circles carry no usable kcam signal
MIN_DEFOCUS_SIGMA = 0.35


@dataclass(frozen=True)
class CircleObservation:
    """One detected (or ground-truth) circle: center and radius in pixels,
    target distance in meters once known."""

    x: float
    y: float
    radius: float
    distance: float | None = None

    def __post_init__(self):
        if not self.radius > 2.0:
            raise DomainError("CircleObservation.radius must exceed 2 px")
        if self.distance is not None and self.distance <= 0.0:
            raise DomainError("CircleObservation.distance must be > 0")


@dataclass(frozen=True)
class EdgeProfile:
    """One slice through a circle, flat-top oriented and scaled to [0, 1].

    samples sit on a unit pixel pitch.  Both sides of the peak need at
    least 5 samples for the edge integrals to mean anything.
    """

    samples: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise DomainError("EdgeProfile.samples must be 1-D")
        if not np.all(np.isfinite(arr)):
            raise DomainError("EdgeProfile.samples must be finite")
        if arr.min() < -1e-9 or abs(arr.max() - 1.0) > 1e-6:
            raise DomainError("EdgeProfile.samples must be normalized to [0, 1] with max 1")
        # the top can be a plateau; measure from its middle
        top = np.flatnonzero(arr == arr.max())
        peak = int((top[0] + top[-1]) // 2)
        if peak < 5 or len(arr) - 1 - peak < 5:
            raise DomainError("EdgeProfile needs at least 5 samples on each side of the peak")
        object.__setattr__(self, "samples", arr)


@dataclass(frozen=True)
class CalibrationResult:
    """Aggregated calibration outcome.

    estimates holds every per-circle kcam that survived screening; the
    reported kcam is the median of the estimates inside the Tukey fences
    [Q1 - 1.5 IQR, Q3 + 1.5 IQR].
    """

    kcam: float
    gamma: float
    estimates: np.ndarray
    inlier_count: int
    q1: float
    q3: float
    records: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.kcam > 0.0:
            raise DomainError("CalibrationResult.kcam must be > 0")
        if self.gamma < 0.0:
            raise DomainError("CalibrationResult.gamma must be >= 0")
        if len(self.estimates) < 3:
            raise DomainError("CalibrationResult needs at least 3 estimates")
        if self.inlier_count < 1 or self.q1 > self.q3:
            raise DomainError("CalibrationResult quartiles/inliers inconsistent")


def _trapz(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return 0.0
    return float(0.5 * (v[1:] + v[:-1]).sum())


def detect_circles(img: Image, expected: int | None = None) -> list[CircleObservation]:
    """Find dark blobs on a light background.

    Threshold at the midpoint of the intensity range, label connected
    components, and keep blobs that do not touch the border and are larger
    than 2 px equivalent radius.  Centroid is the pixel-center mean; radius
    comes from the area, sqrt(area / pi).  Returned row-major (top to
    bottom, then left to right).
    """
    if img.channels != 1:
        raise DomainError("detect_circles wants a grayscale image")
    data = img.data
    lo = float(data.min())
    hi = float(data.max())
    if hi - lo < MIN_CONTRAST:
        found: list[CircleObservation] = []
    else:
        thresh = (lo + hi) / 2.0
        labels, _count = ndimage.label(data < thresh)
        found = []
        h, w = data.shape
        for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            if sl[0].start == 0 or sl[1].start == 0 or sl[0].stop == h or sl[1].stop == w:
                continue
            ys, xs = np.nonzero(labels[sl] == lab)
            area = len(ys)
            radius = math.sqrt(area / math.pi)
            if radius <= 2.0:
                continue
            cy = ys.mean() + sl[0].start + 0.5
            cx = xs.mean() + sl[1].start + 0.5
            found.append(CircleObservation(x=float(cx), y=float(cy), radius=radius))
    found.sort(key=lambda o: (o.y, o.x))
    if expected is not None and len(found) != expected:
        warnings.warn(
            "detect_circles: expected %d circles, found %d" % (expected, len(found)),
            stacklevel=2,
        )
    return found


def estimate_distances(circles: list[CircleObservation], spec, f_pix: float) -> list[CircleObservation]:
    """Fill in the target distance from the pattern's known geometry.

    Nearest-neighbour centers sit spec.diagonal_spacing apart in the world,
    so distance = f_pix * spacing / median nearest-neighbour pixel distance.
    """
    if len(circles) < 2:
        raise InsufficientDataError("need at least 2 circles to estimate distance")
    pts = np.asarray([[o.x, o.y] for o in circles], dtype=np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nn = np.sqrt(d2.min(axis=1))
    med = float(np.median(nn))
    if med <= 0.0:
        raise CalibrationError("degenerate circle layout, zero neighbour spacing")
    distance = f_pix * spec.diagonal_spacing / med
    if not 0.05 < distance < 100.0:
        raise CalibrationError("estimated distance %.3g m is outside (0.05, 100)" % distance)
    return [replace(o, distance=distance) for o in circles]


def edge_std_from_profile(profile: EdgeProfile, threshold: float = 0.95) -> float:
    """Blur std from one flat-top profile, via the Eq.-style area identity.

    Samples at or above threshold form the plateau; the sub-threshold runs
    on either side are the falling edges.  Each run is integrated by the
    trapezoid rule, extended to the exact (linearly interpolated) threshold
    crossing so the estimate does not jump as the plateau boundary drifts
    across a pixel.  std = (J_left + J_right) / sqrt(2 pi).
    """
    if not 0.0 < threshold:
        raise DomainError("threshold must be positive")
    p = profile.samples
    above = p >= threshold
    if above.any():
        i0 = int(np.argmax(above))
        i1 = len(p) - 1 - int(np.argmax(above[::-1]))
        if i0 == 0 or i1 == len(p) - 1:
            raise DegenerateProfileError("profile is missing a falling edge")
        j = _trapz(p[:i0]) + _trapz(p[i1 + 1 :])
        # partial panels up to the interpolated threshold crossings
        frac_l = (threshold - p[i0 - 1]) / (p[i0] - p[i0 - 1])
        j += frac_l * (p[i0 - 1] + threshold) / 2.0
        frac_r = (threshold - p[i1 + 1]) / (p[i1] - p[i1 + 1])
        j += frac_r * (p[i1 + 1] + threshold) / 2.0
    else:
        # threshold above every sample: the whole profile is edges, split at the peak
        m = int(np.argmax(p))
        if m == 0 or m == len(p) - 1:
            raise DegenerateProfileError("peak sits on the profile boundary")
        j = _trapz(p[: m + 1]) + _trapz(p[m:])
    return j / SQRT_2PI


def _profile_for_row(gray: np.ndarray, obs: CircleObservation, row: int,
                     norm_bounds=None):
    """Extract the chord-windowed slice for one row; None when unusable.

    The window spans the circle's chord at this row, endpoint to endpoint,
    so the integration stops at the geometric edge (see module docstring).
    Normalization bounds come from a window padded by one radius on both
    sides (or from the whole image when norm_bounds is given).
    """
    h_img, w_img = gray.shape
    if row < 0 or row >= h_img:
        return None
    dy = (row + 0.5) - obs.y
    if abs(dy) > 0.75 * obs.radius:
        return None
    half = math.sqrt(max(obs.radius * obs.radius - dy * dy, 0.0))
    if half < 5.5:
        return None
    jl = int(round(obs.x - half - 0.5))
    jr = int(round(obs.x + half - 0.5))
    if jl < 0 or jr > w_img - 1 or jr - jl < 10:
        return None
    values = gray[row, jl : jr + 1]
    if norm_bounds is None:
        pad = int(round(obs.radius))
        nwin = gray[row, max(0, jl - pad) : min(w_img, jr + pad + 1)]
        vmax = float(nwin.max())
        vmin = float(nwin.min())
    else:
        vmin, vmax = norm_bounds
    if vmax - vmin < MIN_CONTRAST:
        return None
    p = (vmax - values) / (vmax - vmin)
    top = p.max()
    if top < 0.5:
        return None
    p = np.clip(p / top, 0.0, 1.0)
    try:
        return EdgeProfile(p)
    except DomainError:
        return None


def _slice_rows(obs: CircleObservation) -> list[int]:
    """Row indices through the circle: center and up to +-radius/2, odd count."""
    span = obs.radius / 2.0
    n = min(9, 2 * int(span) + 1)
    if n % 2 == 0:
        n -= 1
    n = max(n, 3)
    center = int(math.floor(obs.y))
    offsets = np.round(np.linspace(-span, span, n)).astype(int)
    return sorted(dict.fromkeys(center + off for off in offsets))


def circle_slice_stds(gray: np.ndarray, obs: CircleObservation,
                      threshold: float = 0.95, norm_bounds=None) -> list[float]:
    """Edge stds of every usable slice through one circle.

    Off-center rows cross the curved edge obliquely, which stretches the
    apparent transition by 1 / cos(theta) along the slice; each std is
    multiplied back by cos(theta) = chord_half / radius to refer it to the
    edge normal.
    """
    out = []
    for row in _slice_rows(obs):
        prof = _profile_for_row(gray, obs, row, norm_bounds=norm_bounds)
        if prof is None:
            continue
        dy = (row + 0.5) - obs.y
        cos_theta = math.sqrt(max(1.0 - (dy / obs.radius) ** 2, 0.0))
        try:
            out.append(cos_theta * edge_std_from_profile(prof, threshold=threshold))
        except DegenerateProfileError:
            continue
    return out


def _norm_bounds(img: Image, normalization: str):
    if normalization == "slice":
        return None
    if normalization == "image":
        return float(img.data.min()), float(img.data.max())
    raise DomainError("normalization must be 'slice' or 'image'")


def estimate_gamma(img: Image, circles: list[CircleObservation],
                   threshold: float = 0.95, normalization: str = "slice") -> float:
    """Intrinsic blur from an in-focus target: median edge std over all
    slices of all circles."""
    bounds = _norm_bounds(img, normalization)
    gray = img.data.astype(np.float64)
    stds: list[float] = []
    for obs in circles:
        stds.extend(circle_slice_stds(gray, obs, threshold=threshold, norm_bounds=bounds))
    if not stds:
        raise CalibrationError("no usable slices: every profile was degenerate")
    return float(np.median(stds))


def _fit_blur_to_center_row(gray: np.ndarray, obs: CircleObservation):
    """Blur std from a two-edge disk-profile fit on the center row.

    The area identity integrates only inside the chord window, so once the
    two edges overlap it saturates near radius / 2.5 no matter how large
    the true blur is.  The fit sees the tails spilling past the geometric
    edge and stays monotone through the merge, which is what the
    reliability test needs.  Returns None when the row is unusable or the
    fit fails to converge.
    """
    h_img, w_img = gray.shape
    row = int(math.floor(obs.y))
    if row < 0 or row >= h_img:
        return None
    jl = max(0, int(math.floor(obs.x - 1.9 * obs.radius)))
    jr = min(w_img - 1, int(math.ceil(obs.x + 1.9 * obs.radius)))
    if jr - jl < 10:
        return None
    values = gray[row, jl : jr + 1]
    x = np.arange(jl, jr + 1, dtype=np.float64) + 0.5 - obs.x
    dip = float(values.max()) - values
    if dip.max() < MIN_CONTRAST:
        return None

    def model(xv, r, lam, amp):
        return amp * (ndtr((r - xv) / lam) - ndtr((-r - xv) / lam))

    r0 = obs.radius
    try:
        popt, _ = curve_fit(
            model, x, dip,
            p0=(r0, max(r0 / 4.0, 1.0), float(dip.max())),
            bounds=([1.0, 0.05, MIN_CONTRAST], [4.0 * r0, 4.0 * r0, 4.0]),
            maxfev=2000,
        )
    except (RuntimeError, ValueError):
        return None
    return float(popt[1])


def estimate_lambda(img: Image, circles: list[CircleObservation],
                    threshold: float = 0.95, normalization: str = "slice"):
    """Per-circle total blur on a defocused target.

    Returns [(observation, lambda_px, reliable)].  A circle is unreliable
    when its radius is under 2 lambda: the two edges then overlap, the flat
    top never develops, and the area identity reads low.  Because of that
    very bias the reliability test cannot use the area estimate itself; it
    is checked against a center-row profile fit instead (the larger of the
    two, so a circle is never trusted on the say-so of a saturated
    estimator).  Circles with no usable slices are dropped.
    """
    bounds = _norm_bounds(img, normalization)
    gray = img.data.astype(np.float64)
    out = []
    for obs in circles:
        stds = circle_slice_stds(gray, obs, threshold=threshold, norm_bounds=bounds)
        if not stds:
            continue
        lam = float(np.median(stds))
        lam_fit = _fit_blur_to_center_row(gray, obs)
        probe = lam if lam_fit is None else max(lam, lam_fit)
        out.append((obs, lam, obs.radius >= 2.0 * probe))
    return out


def solve_kcam(lam: float, gamma: float, s1: float, s2: float) -> float:
    """One circle's kcam estimate.  Returns 0.0 when lam <= gamma (no
    measurable defocus; callers discard those)."""
    if lam < 0.0 or gamma < 0.0:
        raise DomainError("blur values must be non-negative")
    if s1 <= 0.0 or s2 <= 0.0:
        raise DomainError("distances must be positive")
    if abs(s2 - s1) < 1e-12:
        raise DomainError("target at the focus distance carries no defocus signal")
    if lam <= gamma:
        return 0.0
    sigma = math.sqrt(lam * lam - gamma * gamma)
    return sigma * s2 / abs(s1 - s2)


def aggregate_kcam(estimates) -> tuple[float, np.ndarray, float, float]:
    """Robust pooling of per-circle estimates.

    Returns (kcam, inlier_mask, q1, q3) where kcam is the median of the
    estimates inside the Tukey fences.  Needs at least 3 estimates.
    """
    arr = np.asarray(list(estimates), dtype=np.float64)
    if arr.ndim != 1 or len(arr) < 3:
        raise InsufficientDataError("aggregate_kcam needs at least 3 estimates")
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("estimates must be positive and finite")
    q1, q3 = np.percentile(arr, [25.0, 75.0])
    iqr = q3 - q1
    inliers = (arr >= q1 - 1.5 * iqr) & (arr <= q3 + 1.5 * iqr)
    kcam = float(np.median(arr[inliers]))
    return kcam, inliers, float(q1), float(q3)


def calibrate(pairs, spec, f_pix: float, s1: float,
              threshold: float = 0.95, normalization: str = "slice") -> CalibrationResult:
    """Full pipeline over (focused, defocused) image pairs.

    gamma pools slice stds from every focused image; lambda is estimated
    per circle on each defocused image, whose detections also fix the
    target distance.  Unreliable circles (radius < 2 lambda) and circles
    whose defocus excess over gamma is inside the measurement floor are
    discarded before aggregation; a pair shot at the focus distance
    contributes nothing and calibration fails if no pair carries signal.
    """
    if s1 <= 0.0 or f_pix <= 0.0:
        raise DomainError("s1 and f_pix must be > 0")
    if len(pairs) == 0:
        raise InsufficientDataError("calibrate needs at least one image pair")

    gamma_stds: list[float] = []
    lam_by_pair = []
    for index, (focused, defocused) in enumerate(pairs):
        foc = rgb_to_gray(focused)
        dfc = rgb_to_gray(defocused)
        obs_f = detect_circles(foc, expected=spec.count)
        obs_d = detect_circles(dfc, expected=spec.count)
        if not obs_f or len(obs_d) < 2:
            raise CalibrationError("pair %d: target not found" % index)
        obs_d = estimate_distances(obs_d, spec, f_pix)
        bounds_f = _norm_bounds(foc, normalization)
        gray_f = foc.data.astype(np.float64)
        for obs in obs_f:
            gamma_stds.extend(circle_slice_stds(gray_f, obs, threshold=threshold,
                                                norm_bounds=bounds_f))
        lam_by_pair.append((index, estimate_lambda(dfc, obs_d, threshold=threshold,
                                                   normalization=normalization)))

    if not gamma_stds:
        raise CalibrationError("no usable slices on any focused image")
    gamma = float(np.median(gamma_stds))

    estimates = []
    records = []
    for index, lams in lam_by_pair:
        for obs, lam, reliable in lams:
            if not reliable:
                continue
            if abs(obs.distance - s1) < 1e-9:
                continue
            if lam * lam - gamma * gamma <= MIN_DEFOCUS_SIGMA ** 2:
                continue
            k = solve_kcam(lam, gamma, s1, obs.distance)
            if k > 0.0:
                estimates.append(k)
                records.append((index, obs, lam, k))

    if len(estimates) < 3:
        raise InsufficientDataError(
            "only %d usable circle estimates, need at least 3" % len(estimates)
        )
    kcam, inliers, q1, q3 = aggregate_kcam(estimates)
    return CalibrationResult(
        kcam=kcam,
        gamma=gamma,
        estimates=np.asarray(estimates, dtype=np.float64),
        inlier_count=int(inliers.sum()),
        q1=q1,
        q3=q3,
        records=records,
    )
