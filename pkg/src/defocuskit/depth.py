"""Blur-to-depth inversion and depth accuracy metrics.

Inverting sigma = kcam |s1 - s2| / s2 gives two candidates:

    near: s2 = s1 / (1 + sigma/kcam)        always defined, in (0, s1]
    far:  s2 = s1 / (1 - sigma/kcam)        only while sigma < kcam

The far branch saturates (sigma -> kcam as s2 -> inf), so past that the
pixel simply has no far-side interpretation and stays invalid under the far
policy.  The oracle policy uses ground truth to pick the better branch per
pixel, which bounds what any disambiguation scheme could achieve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyEvaluationError
from .optics import BlurModel
from .raster import BlurMap, DepthMap

POLICIES = ("near", "far", "oracle")


@dataclass(frozen=True)
class DepthMetrics:
    """Standard depth evaluation bundle over the valid pixel set."""

    rel: float
    mse: float
    rmse: float
    log10: float
    delta1: float
    delta2: float
    delta3: float
    count: int


def invert_blur_map(blur: BlurMap, model: BlurModel, policy: str = "near",
                    gt: DepthMap | None = None) -> DepthMap:
    """Per-pixel depth from total blur under a branch policy.

    The intrinsic gamma is removed in quadrature first (clamping to zero
    where measured blur dips below gamma).  Under "far", pixels whose
    defocus meets or exceeds kcam become invalid.  "oracle" needs gt and
    picks the candidate closer to it; pixels with invalid gt stay invalid.
    """
    if policy not in POLICIES:
        raise DomainError("policy must be one of %s" % (POLICIES,))
    lam = blur.data.astype(np.float64)
    valid = blur.mask
    sig2 = lam * lam - model.gamma * model.gamma
    sigma = np.sqrt(np.clip(sig2, 0.0, None))
    ratio = sigma / model.kcam

    near = model.s1 / (1.0 + ratio)
    with np.errstate(divide="ignore", invalid="ignore"):
        far = np.where(ratio < 1.0 - 1e-12, model.s1 / (1.0 - ratio), np.nan)

    if policy == "near":
        out = near
    elif policy == "far":
        out = far
    else:
        if gt is None:
            raise DomainError("oracle policy needs ground truth depth")
        if gt.data.shape != blur.data.shape:
            raise DomainError("gt and blur dimensions must match")
        g = gt.data.astype(np.float64)
        take_far = ~np.isnan(far) & gt.mask & (np.abs(far - g) < np.abs(near - g))
        out = np.where(take_far, far, near)
        out = np.where(gt.mask, out, np.nan)
    out = np.where(valid, out, np.nan)
    return DepthMap(out.astype(np.float32))


def compute_metrics(pred: DepthMap, gt: DepthMap, range_max: float = 2.0) -> DepthMetrics:
    """REL, MSE, RMSE, log10 and the delta thresholds on pixels where both
    maps are valid and gt is within range_max meters."""
    if pred.data.shape != gt.data.shape:
        raise DomainError("pred and gt dimensions must match")
    if range_max <= 0.0:
        raise DomainError("range_max must be > 0")
    use = pred.mask & gt.mask & (gt.data <= range_max)
    if not use.any():
        raise EmptyEvaluationError("no valid pixels inside the evaluation range")
    p = pred.data[use].astype(np.float64)
    g = gt.data[use].astype(np.float64)

    err = np.abs(g - p)
    rel = float(np.mean(err / g))
    mse = float(np.mean((g - p) ** 2))
    rmse = float(np.sqrt(mse))
    log10 = float(np.mean(np.abs(np.log10(g) - np.log10(p))))
    ratio = np.maximum(g / p, p / g)
    deltas = [float(np.mean(ratio < 1.25 ** n)) for n in (1, 2, 3)]
    return DepthMetrics(rel=rel, mse=mse, rmse=rmse, log10=log10,
                        delta1=deltas[0], delta2=deltas[1], delta3=deltas[2],
                        count=int(use.sum()))


def kcam_sweep(blur: BlurMap, gt: DepthMap, model: BlurModel, kcam_values,
               policy: str = "near", range_max: float = 2.0):
    """RMSE of the inversion as the assumed kcam is varied.

    Returns [(kcam, rmse)] in the order given.  A calibrated camera should
    put the minimum at its true kcam; how steeply the curve rises off the
    minimum is the sensitivity of depth accuracy to miscalibration.
    """
    values = [float(k) for k in kcam_values]
    if not values:
        raise DomainError("kcam_values must be non-empty")
    out = []
    for k in values:
        trial = BlurModel(kcam=k, gamma=model.gamma, s1=model.s1)
        pred = invert_blur_map(blur, trial, policy=policy, gt=gt)
        m = compute_metrics(pred, gt, range_max=range_max)
        out.append((k, m.rmse))
    return out
