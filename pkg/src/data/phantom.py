"""Ellipse phantoms in normalized units.

Values live in [0, 1]; the nominal HU mapping is HU = -1000 + 2000 * v, so
air sits at 0 and water/soft tissue near 0.5.
"""

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Tuple

import numpy as np

from src.utils.errors import ConfigError

HU_OFFSET = -1000.0
HU_SCALE = 2000.0


class Ellipse(NamedTuple):

    center: Tuple[float, float]
    axes: Tuple[float, float]
    angle: float
    intensity: float


@dataclass
class PhantomSpec:

    size: int = 64
    ellipses: List[Ellipse] = field(default_factory=list)

    def __post_init__(self):

        if int(self.size) < 1:
            raise ConfigError(f"must be a positive integer, got {self.size}", path="size")
        self.size = int(self.size)

        ellipses = []
        for index, item in enumerate(self.ellipses):
            ellipse = Ellipse(*item)
            if ellipse.axes[0] <= 0 or ellipse.axes[1] <= 0:
                raise ConfigError(f"half-axes must be positive, got {ellipse.axes}", path=f"ellipses[{index}]")
            ellipses.append(ellipse)
        self.ellipses = ellipses


def to_hu(values):

    return HU_OFFSET + HU_SCALE * np.asarray(values, dtype=np.float64)


def from_hu(hu):

    return (np.asarray(hu, dtype=np.float64) - HU_OFFSET) / HU_SCALE


def render_phantom(spec: PhantomSpec) -> np.ndarray:
    """Sum of ellipse indicators over the [-1, 1]^2 frame, clamped to [0, 1]. Shape [1, H, W]."""

    n = spec.size
    coords = np.linspace(-1.0, 1.0, n)
    x, y = np.meshgrid(coords, -coords)

    image = np.zeros((n, n))

    for ellipse in spec.ellipses:
        x0, y0 = ellipse.center
        a, b = ellipse.axes
        phi = math.radians(ellipse.angle)
        cos, sin = math.cos(phi), math.sin(phi)

        dx = x - x0
        dy = y - y0
        xr = dx * cos + dy * sin
        yr = -dx * sin + dy * cos

        inside = (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
        image[inside] += ellipse.intensity

    np.clip(image, 0.0, 1.0, out=image)
    return image[None, :, :]


# (intensity, a, b, x0, y0, angle) of the modified (high-contrast) Shepp-Logan head.
SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def shepp_logan_spec(size: int = 64) -> PhantomSpec:

    ellipses = [
        Ellipse((x0, y0), (a, b), angle, intensity)
        for intensity, a, b, x0, y0, angle in SHEPP_LOGAN
    ]
    return PhantomSpec(size=size, ellipses=ellipses)


def random_phantom_spec(size: int, rng: np.random.Generator) -> PhantomSpec:
    """Body ellipse near water, a few soft-tissue organs, and small low-contrast lesions."""

    ellipses = [
        Ellipse(
            center=tuple(rng.normal(0.0, 0.05, size=2)),
            axes=(rng.uniform(0.7, 0.9), rng.uniform(0.6, 0.85)),
            angle=rng.uniform(-10.0, 10.0),
            intensity=0.5
        )
    ]

    for _ in range(int(rng.integers(3, 6))):
        ellipses.append(Ellipse(
            center=tuple(rng.uniform(-0.45, 0.45, size=2)),
            axes=(rng.uniform(0.08, 0.3), rng.uniform(0.08, 0.3)),
            angle=rng.uniform(0.0, 180.0),
            intensity=rng.uniform(-0.04, 0.06)
        ))

    for _ in range(int(rng.integers(0, 4))):
        ellipses.append(Ellipse(
            center=tuple(rng.uniform(-0.4, 0.4, size=2)),
            axes=(rng.uniform(0.02, 0.06), rng.uniform(0.02, 0.06)),
            angle=rng.uniform(0.0, 180.0),
            intensity=rng.uniform(-0.03, 0.03)
        ))

    return PhantomSpec(size=size, ellipses=ellipses)
