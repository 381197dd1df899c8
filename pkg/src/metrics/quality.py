from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from src.utils.errors import ContractError, DimensionError
from src.utils.helpers import mean_std

PSNR_CAP = 99.0

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_RADIUS = 5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def as_image(value) -> np.ndarray:

    image = np.asarray(value, dtype=np.float64)
    while image.ndim > 2 and image.shape[0] == 1:
        image = image[0]
    if image.ndim != 2:
        raise DimensionError(f"expected a single-channel 2-D image, got shape {np.shape(value)}")
    return image


def as_image_set(values) -> List[np.ndarray]:

    if isinstance(values, np.ndarray) and values.ndim == 2:
        return [as_image(values)]
    return [as_image(v) for v in values]


def _check_pair(test: np.ndarray, ref: np.ndarray, data_range: float):

    if test.shape != ref.shape:
        raise DimensionError(f"image shapes differ: {test.shape} vs {ref.shape}")
    if not data_range > 0:
        raise ContractError(f"data_range must be positive, got {data_range}")


def psnr(test, ref, data_range: float = 1.0) -> float:
    """10 log10(range^2 / MSE), capped at 99 dB (identical images)."""

    test, ref = as_image(test), as_image(ref)
    _check_pair(test, ref, data_range)

    mse = float(np.mean((test - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(data_range ** 2 / mse))


def _local_moments(test: np.ndarray, ref: np.ndarray):

    def window(a):
        return gaussian_filter(a, SSIM_SIGMA, mode='reflect', truncate=SSIM_TRUNCATE)

    mu_t = window(test)
    mu_r = window(ref)
    var_t = window(test * test) - mu_t * mu_t
    var_r = window(ref * ref) - mu_r * mu_r
    cov = window(test * ref) - mu_t * mu_r

    crop = (slice(SSIM_RADIUS, -SSIM_RADIUS), slice(SSIM_RADIUS, -SSIM_RADIUS))
    return mu_t[crop], mu_r[crop], var_t[crop], var_r[crop], cov[crop]


def _check_ssim_size(image: np.ndarray):

    size = 2 * SSIM_RADIUS + 1
    if image.shape[0] < size or image.shape[1] < size:
        raise ContractError(f"SSIM needs images of at least {size}x{size}, got {image.shape}")


def ssim(test, ref, data_range: float = 1.0) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), borders of half a window dropped."""

    test, ref = as_image(test), as_image(ref)
    _check_pair(test, ref, data_range)
    _check_ssim_size(test)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_t, mu_r, var_t, var_r, cov = _local_moments(test, ref)

    numerator = (2.0 * mu_t * mu_r + c1) * (2.0 * cov + c2)
    denominator = (mu_t * mu_t + mu_r * mu_r + c1) * (var_t + var_r + c2)
    return float(np.mean(numerator / denominator))


def ssim_components(test, ref, data_range: float = 1.0) -> Dict[str, float]:
    """Mean luminance, contrast and structure terms (C3 = C2 / 2)."""

    test, ref = as_image(test), as_image(ref)
    _check_pair(test, ref, data_range)
    _check_ssim_size(test)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    c3 = c2 / 2.0
    mu_t, mu_r, var_t, var_r, cov = _local_moments(test, ref)

    sd_t = np.sqrt(np.maximum(var_t, 0.0))
    sd_r = np.sqrt(np.maximum(var_r, 0.0))

    return {
        'luminance': float(np.mean((2.0 * mu_t * mu_r + c1) / (mu_t * mu_t + mu_r * mu_r + c1))),
        'contrast': float(np.mean((2.0 * sd_t * sd_r + c2) / (var_t + var_r + c2))),
        'structure': float(np.mean((cov + c3) / (sd_t * sd_r + c3)))
    }


@dataclass
class MetricsReport:

    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    rows: List[Tuple[int, float, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, float]:

        return {
            'psnr_mean': self.psnr_mean,
            'psnr_std': self.psnr_std,
            'ssim_mean': self.ssim_mean,
            'ssim_std': self.ssim_std,
            'count': len(self.rows)
        }


def report(tests: Sequence, refs: Sequence, data_range: float = 1.0) -> MetricsReport:

    tests = as_image_set(tests)
    refs = as_image_set(refs)

    if not tests or not refs:
        raise ContractError("cannot report on an empty image set")
    if len(tests) != len(refs):
        raise ContractError(f"misaligned sets: {len(tests)} test images vs {len(refs)} references")

    rows = [
        (index, psnr(test, ref, data_range), ssim(test, ref, data_range))
        for index, (test, ref) in enumerate(zip(tests, refs))
    ]

    psnr_stats = mean_std([row[1] for row in rows])
    ssim_stats = mean_std([row[2] for row in rows])

    return MetricsReport(
        psnr_mean=psnr_stats['mean'],
        psnr_std=psnr_stats['std'],
        ssim_mean=ssim_stats['mean'],
        ssim_std=ssim_stats['std'],
        rows=rows
    )
