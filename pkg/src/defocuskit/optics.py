"""Thin-lens defocus model.

A camera focused at distance ``s1`` renders a point at distance ``s2`` as a
blur spot whose Gaussian radius in output pixels is

    sigma = kcam * |s1 - s2| / s2

where ``kcam`` collapses every camera-body constant into one scalar:

    kcam = 1/(s1 - f) * f^2/N * 1/p * (out_pix / sensor_pix) * 1/kr

with focal length ``f`` (m), f-number ``N``, pixel pitch ``p`` (m), the
resize ratio between sensor and delivered image, and the empirical
CoC-to-Gaussian ratio ``kr``.  Everything downstream (rendering, calibration,
depth inversion) talks to the camera only through ``kcam``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class CameraParams:
    """Physical camera description.

    f and p are in meters, s1 in meters, out_pix/sensor_pix in pixels along
    the same axis.  kr is the dimensionless ratio between the geometric CoC
    diameter and the Gaussian sigma that best matches observed blur; 1.0
    means "use the raw thin-lens prediction".
    """

    f: float
    N: float
    p: float
    out_pix: int
    sensor_pix: int
    s1: float
    kr: float = 1.0

    def __post_init__(self):
        for name in ("f", "N", "p", "kr"):
            if not getattr(self, name) > 0.0:
                raise DomainError("CameraParams.%s must be > 0" % name)
        for name in ("out_pix", "sensor_pix"):
            if getattr(self, name) <= 0:
                raise DomainError("CameraParams.%s must be > 0" % name)
        if not self.s1 > self.f:
            raise DomainError("CameraParams.s1 must exceed the focal length f")


@dataclass(frozen=True)
class BlurModel:
    """The three numbers the blur pipeline actually needs.

    kcam: defocus gain in pixels (see module docstring).
    gamma: intrinsic blur of the camera in pixels, measured on an in-focus
        target; the total observed blur at depth s2 is
        sqrt(sigma(s2)^2 + gamma^2).
    s1: focus distance in meters.
    """

    kcam: float
    gamma: float
    s1: float

    def __post_init__(self):
        if not self.kcam > 0.0:
            raise DomainError("BlurModel.kcam must be > 0")
        if self.gamma < 0.0:
            raise DomainError("BlurModel.gamma must be >= 0")
        if not self.s1 > 0.0:
            raise DomainError("BlurModel.s1 must be > 0")


def kcam_from_params(params: CameraParams) -> float:
    """Collapse a CameraParams into the scalar defocus gain (pixels)."""
    return (
        1.0
        / (params.s1 - params.f)
        * (params.f * params.f / params.N)
        / params.p
        * (params.out_pix / params.sensor_pix)
        / params.kr
    )


def sigma_from_depth(s2, model: BlurModel):
    """Defocus sigma in pixels for scene depth s2 (meters).

    Accepts a scalar or an ndarray of depths; all must be > 0.
    """
    s2_arr = np.asarray(s2, dtype=float)
    if np.any(s2_arr <= 0.0):
        raise DomainError("depth s2 must be > 0")
    out = model.kcam * np.abs(model.s1 - s2_arr) / s2_arr
    return out.item() if out.ndim == 0 else out


def normalize_blur(sigma, kcam: float):
    """Divide out kcam, leaving the camera-independent |s1 - s2| / s2."""
    if not kcam > 0.0:
        raise DomainError("kcam must be > 0")
    sig_arr = np.asarray(sigma, dtype=float)
    if np.any(sig_arr < 0.0):
        raise DomainError("sigma must be >= 0")
    out = sig_arr / kcam
    return out.item() if out.ndim == 0 else out


def depth_candidates_from_sigma(sigma: float, model: BlurModel):
    """Invert sigma back to the two candidate depths.

    Returns (near, far) in meters.  near is always defined and lies in
    (0, s1].  far = s1 / (1 - sigma/kcam) only exists while sigma < kcam
    (the far branch saturates at kcam as s2 -> inf); otherwise far is None.
    """
    if sigma < 0.0:
        raise DomainError("sigma must be >= 0")
    ratio = sigma / model.kcam
    near = model.s1 / (1.0 + ratio)
    far = model.s1 / (1.0 - ratio) if ratio < 1.0 else None
    return near, far


def blur_curve(model: BlurModel, s2_min: float, s2_max: float, n: int) -> list:
    """Sample sigma over [s2_min, s2_max]: n evenly spaced (s2, sigma) pairs."""
    if not 0.0 < s2_min < s2_max:
        raise DomainError("blur_curve needs 0 < s2_min < s2_max")
    if n < 2:
        raise DomainError("blur_curve needs at least 2 samples")
    s2 = np.linspace(s2_min, s2_max, int(n))
    sig = sigma_from_depth(s2, model)
    return list(zip(s2.tolist(), sig.tolist()))


def fov_width(sensor_len: float, f: float, distance: float) -> float:
    """Scene extent (m) covered by a sensor of physical size sensor_len at
    the given distance: w = (sensor_len / f) * distance."""
    if sensor_len <= 0.0 or f <= 0.0 or distance <= 0.0:
        raise DomainError("fov_width arguments must all be > 0")
    return sensor_len / f * distance


# Camera parameter files are flat key=value text.  Keys carry their units so
# a file is readable without this docstring; values are converted to base
# units (meters, pixels) on load.
CAMERA_FILE_KEYS = ("f_mm", "N", "p_um", "out_pix", "sensor_pix", "s1_m", "kr", "gamma_px")


def parse_camera_text(text: str) -> tuple[CameraParams, float]:
    """Parse key=value camera text; returns (CameraParams, gamma_px).

    Blank lines and lines starting with '#' are skipped.  Unknown or
    duplicate keys and missing keys are hard errors: a silently ignored
    typo in a camera file corrupts every downstream number.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected key=value, got %r" % (lineno, raw))
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in CAMERA_FILE_KEYS:
            raise ConfigError("line %d: unknown key %r" % (lineno, key))
        if key in values:
            raise ConfigError("line %d: duplicate key %r" % (lineno, key))
        try:
            values[key] = float(val.strip())
        except ValueError:
            raise ConfigError("line %d: bad value for %r: %r" % (lineno, key, val.strip())) from None
    missing = [k for k in CAMERA_FILE_KEYS if k not in values]
    if missing:
        raise ConfigError("missing key %s" % ", ".join(repr(k) for k in missing))
    params = CameraParams(
        f=values["f_mm"] * 1e-3,
        N=values["N"],
        p=values["p_um"] * 1e-6,
        out_pix=int(values["out_pix"]),
        sensor_pix=int(values["sensor_pix"]),
        s1=values["s1_m"],
        kr=values["kr"],
    )
    gamma = values["gamma_px"]
    if gamma < 0.0:
        raise ConfigError("gamma_px must be >= 0")
    return params, gamma


def load_camera_file(path) -> tuple[CameraParams, float]:
    """Read a camera file; returns (CameraParams, gamma_px)."""
    with open(path, "r", encoding="ascii") as fh:
        return parse_camera_text(fh.read())


def model_from_params(params: CameraParams, gamma: float) -> BlurModel:
    """Bundle a camera into the runtime blur model."""
    return BlurModel(kcam=kcam_from_params(params), gamma=gamma, s1=params.s1)


def focal_px(params: CameraParams) -> float:
    """Focal length expressed in output pixels: (f / p) * (out_pix / sensor_pix)."""
    return params.f / params.p * (params.out_pix / params.sensor_pix)
