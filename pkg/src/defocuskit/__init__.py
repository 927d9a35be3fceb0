"""Camera-aware defocus blur toolkit.

One scalar, kcam, ties a camera body to the blur it produces: predict blur
from depth, render synthetically refocused images, calibrate kcam from
photos of a circle grid, and invert blur maps back to depth.
"""

from .calib import (
    CalibrationResult,
    CircleObservation,
    EdgeProfile,
    aggregate_kcam,
    calibrate,
    detect_circles,
    edge_std_from_profile,
    estimate_distances,
    estimate_gamma,
    estimate_lambda,
    solve_kcam,
)
from .depth import DepthMetrics, compute_metrics, invert_blur_map, kcam_sweep
from .errors import (
    CalibrationError,
    ConfigError,
    DegenerateProfileError,
    DomainError,
    EmptyEvaluationError,
    InsufficientDataError,
    ParseError,
)
from .optics import (
    BlurModel,
    CameraParams,
    blur_curve,
    depth_candidates_from_sigma,
    focal_px,
    fov_width,
    kcam_from_params,
    load_camera_file,
    model_from_params,
    normalize_blur,
    parse_camera_text,
    sigma_from_depth,
)
from .psf import (
    GaussianKernel,
    compose_sigmas,
    convolve,
    defocus_sigma_from_total,
    make_kernel,
    psf_value,
)
from .raster import (
    BlurMap,
    DepthMap,
    Image,
    load_blur,
    load_depth,
    load_image,
    rgb_to_gray,
    save_blur,
    save_depth,
    save_image,
)
from .render import (
    PatternSpec,
    blur_map_from_depth,
    refocus,
    render_calibration_pair,
    render_pattern,
    write_dataset_sample,
)

__version__ = "0.1.0"
