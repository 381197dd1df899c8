import csv
import logging
import os
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from PIL import Image

from src.data.phantom import to_hu
from src.metrics.quality import MetricsReport, as_image
from src.metrics.spectrum import SpectrumProfile

logger = logging.getLogger(__name__)

METRICS_HEADER = ['slice_index', 'psnr', 'ssim']
PROFILE_HEADER = ['freq', 'power']
TIMING_HEADER = ['image_index', 'seconds', 'evaluations']
SWEEP_HEADER = [
    'label', 'temperatures', 'lambda',
    'psnr_mean', 'psnr_std', 'ssim_mean', 'ssim_std', 'nps_band_power'
]

DISPLAY_WINDOW = (-160.0, 240.0)


def _ensure_parent(path: str):

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence]):

    _ensure_parent(path)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_rows(path: str) -> Tuple[List[str], List[List[str]]]:

    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def write_metrics_csv(path: str, report: MetricsReport):

    write_rows(path, METRICS_HEADER, ([index, float(p), float(s)] for index, p, s in report.rows))


def write_profile_csv(path: str, profile: SpectrumProfile):

    write_rows(path, PROFILE_HEADER, zip(map(float, profile.freq), map(float, profile.power)))


def write_timing_csv(path: str, timings: Sequence[float], evaluations: Sequence[int]):

    write_rows(path, TIMING_HEADER, ([i, float(t), int(n)] for i, (t, n) in enumerate(zip(timings, evaluations))))


def write_sweep_csv(path: str, rows: Sequence[Dict]):

    write_rows(path, SWEEP_HEADER, ([row[key] for key in SWEEP_HEADER] for row in rows))


def to_display(image, window: Tuple[float, float] = DISPLAY_WINDOW) -> np.ndarray:
    """Map normalized values through the HU display window to 8-bit gray."""

    low, high = window
    hu = to_hu(as_image(image))
    scaled = np.clip((hu - low) / (high - low), 0.0, 1.0)
    return np.rint(scaled * 255.0).astype(np.uint8)


def export_png(path: str, image, window: Tuple[float, float] = DISPLAY_WINDOW):

    _ensure_parent(path)
    Image.fromarray(to_display(image, window)).save(path)


def export_png_series(directory: str, images, prefix: str = "slice") -> List[str]:

    paths = []
    for index, image in enumerate(images):
        path = os.path.join(directory, f"{prefix}_{index:04d}.png")
        export_png(path, image)
        paths.append(path)

    logger.info(f"Exported {len(paths)} PNG previews to {directory}")
    return paths
