"""Residual power spectrum (RPS) and flat-ROI noise power spectrum (NPS).

Frequencies are in cycles/pixel unless a pixel spacing is given. Radial
bins have width 1/n for an n-pixel axis and run from DC to Nyquist; each
2-D frequency goes to its nearest bin and bins average their members.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.metrics.quality import as_image_set
from src.utils.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_FLATNESS_FACTOR = 3.0
ROUNDOFF = 1e-12


class RoiRect(NamedTuple):

    top: int
    left: int
    size: int


@dataclass
class SpectrumProfile:

    freq: np.ndarray
    power: np.ndarray
    raw_power: np.ndarray
    bin_width: float
    sample_count: int
    dc: float = 0.0
    roi_count: int = 0

    def band_power(self, low: float, high: float) -> float:
        """Unnormalized power integrated (rectangle rule) over bins with low <= f <= high."""

        mask = (self.freq >= low) & (self.freq <= high)
        return float(np.sum(self.raw_power[mask]) * self.bin_width)

    def area(self) -> float:

        return float(np.sum(self.power) * self.bin_width)


def radial_profile(spectrum: np.ndarray, pixel_spacing: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, float]:
    """Bin an unshifted 2-D power spectrum radially. Returns (freq, power, bin_width)."""

    height, width = spectrum.shape
    fy = np.fft.fftfreq(height)
    fx = np.fft.fftfreq(width)
    rho = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)

    step = 1.0 / min(height, width)
    nyquist_bin = int(np.floor(0.5 / step + 1e-9))
    index = np.rint(rho / step).astype(np.int64)

    keep = index <= nyquist_bin
    sums = np.bincount(index[keep], weights=spectrum[keep], minlength=nyquist_bin + 1)
    counts = np.bincount(index[keep], minlength=nyquist_bin + 1)

    present = counts > 0
    bins = np.arange(nyquist_bin + 1)[present]
    power = sums[present] / counts[present]

    scale = 1.0 if pixel_spacing is None else 1.0 / float(pixel_spacing)
    return bins * step * scale, power, step * scale


def _check_sets(tests: List[np.ndarray], refs: List[np.ndarray]):

    if not tests:
        raise ContractError("spectrum needs at least one image")
    if len(tests) != len(refs):
        raise ContractError(f"misaligned sets: {len(tests)} vs {len(refs)} images")
    for index, (test, ref) in enumerate(zip(tests, refs)):
        if test.shape != ref.shape or test.shape != tests[0].shape:
            raise DimensionError(f"image {index}: shape {test.shape} vs reference {ref.shape}")


def rps(tests: Sequence, refs: Sequence, pixel_spacing: Optional[float] = None) -> Tuple[np.ndarray, SpectrumProfile]:
    """Average |DFT(residual - mean)|^2 / (H W) over the set, plus its radial profile.

    The DC power of the raw residual (before mean removal) is reported in ``dc``.
    """

    tests = as_image_set(tests)
    refs = as_image_set(refs)
    _check_sets(tests, refs)

    height, width = tests[0].shape
    spectrum = np.zeros((height, width))
    dc = 0.0

    for test, ref in zip(tests, refs):
        residual = test - ref
        mean = residual.mean()
        dc += (mean * height * width) ** 2 / (height * width)
        spectrum += np.abs(np.fft.fft2(residual - mean)) ** 2 / (height * width)

    spectrum /= len(tests)
    dc /= len(tests)

    freq, power, step = radial_profile(spectrum, pixel_spacing)
    profile = SpectrumProfile(
        freq=freq,
        power=power,
        raw_power=power.copy(),
        bin_width=step,
        sample_count=len(tests),
        dc=dc
    )
    return spectrum, profile


def plane_design(size: int) -> np.ndarray:

    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.column_stack([np.ones(size * size), rows.ravel(), cols.ravel()])


def detrend_plane(patches: np.ndarray, design: Optional[np.ndarray] = None) -> np.ndarray:
    """Remove the least-squares plane from one [n, n] patch or a stack [N, n, n]."""

    patches = np.asarray(patches, dtype=np.float64)
    size = patches.shape[-1]
    if design is None:
        design = plane_design(size)

    values = patches.reshape(-1, size * size)
    coef = values @ np.linalg.pinv(design).T
    return (values - coef @ design.T).reshape(patches.shape)


def _check_roi(roi: RoiRect, shape: Tuple[int, int]):

    if roi.size < 2:
        raise ContractError(f"ROI size must be at least 2, got {roi.size}")
    if roi.top < 0 or roi.left < 0 or roi.top + roi.size > shape[0] or roi.left + roi.size > shape[1]:
        raise ContractError(f"ROI {tuple(roi)} lies outside a {shape[0]}x{shape[1]} image")


def nps(
    images: Sequence,
    rois: Sequence[RoiRect],
    pixel_spacing: Optional[float] = None,
    flatness_factor: Optional[float] = DEFAULT_FLATNESS_FACTOR
) -> SpectrumProfile:
    """Plane-detrended flat-ROI NPS, ensemble averaged and normalized to unit area.

    ROIs whose detrended std exceeds ``flatness_factor`` x the median ROI std
    are dropped; pass ``None`` to keep every ROI.
    """

    images = as_image_set(images)
    rois = [RoiRect(*roi) for roi in rois]

    if not images:
        raise ContractError("NPS needs at least one image")
    if not rois:
        raise ContractError("NPS needs at least one ROI")

    size = rois[0].size
    for roi in rois:
        if roi.size != size:
            raise ContractError(f"all ROIs must share one size, got {roi.size} and {size}")
        for image in images:
            _check_roi(roi, image.shape)

    design = plane_design(size)
    raw = np.array([
        image[roi.top:roi.top + size, roi.left:roi.left + size]
        for image in images
        for roi in rois
    ])
    patches = detrend_plane(raw, design)

    # Residuals at roundoff level of the ROI values count as exactly flat.
    floor = ROUNDOFF * max(1.0, float(np.max(np.abs(raw))))
    stds = patches.reshape(len(patches), -1).std(axis=1)
    patches[stds <= floor] = 0.0

    if flatness_factor is not None:
        threshold = max(flatness_factor * float(np.median(stds)), floor)
        flat = stds <= threshold
        if not np.any(flat):
            raise ContractError("every ROI failed the flatness check")
        if not np.all(flat):
            logger.warning(f"Dropped {int(np.sum(~flat))} of {len(patches)} ROIs that failed the flatness check")
        patches = patches[flat]

    spacing = 1.0 if pixel_spacing is None else float(pixel_spacing)
    spectra = np.abs(np.fft.fft2(patches)) ** 2 * (spacing * spacing) / (size * size)
    spectrum = spectra.mean(axis=0)

    freq, raw_power, step = radial_profile(spectrum, pixel_spacing)
    area = float(np.sum(raw_power) * step)
    power = raw_power / area if area > 0 else np.zeros_like(raw_power)

    return SpectrumProfile(
        freq=freq,
        power=power,
        raw_power=raw_power,
        bin_width=step,
        sample_count=len(images),
        dc=float(raw_power[0]) if freq[0] == 0 else 0.0,
        roi_count=len(patches)
    )


def select_flat_rois(reference, size: int, count: int, stride: Optional[int] = None) -> List[RoiRect]:
    """Pick up to ``count`` non-overlapping windows with the smallest plane-fit residual std."""

    image = as_image_set([reference])[0]
    height, width = image.shape

    if size < 2 or size > height or size > width:
        raise ContractError(f"ROI size {size} does not fit a {height}x{width} image")
    if count < 1:
        raise ContractError(f"ROI count must be positive, got {count}")

    stride = stride or max(1, size // 2)
    design = plane_design(size)

    candidates = []
    for top in range(0, height - size + 1, stride):
        for left in range(0, width - size + 1, stride):
            residual = detrend_plane(image[top:top + size, left:left + size], design)
            candidates.append((float(residual.std()), top, left))

    candidates.sort()
    chosen: List[RoiRect] = []

    for _, top, left in candidates:
        overlaps = any(
            top < roi.top + size and roi.top < top + size and left < roi.left + size and roi.left < left + size
            for roi in chosen
        )
        if not overlaps:
            chosen.append(RoiRect(top, left, size))
        if len(chosen) == count:
            break

    logger.debug(f"Selected {len(chosen)} flat ROIs of size {size}")
    return chosen
