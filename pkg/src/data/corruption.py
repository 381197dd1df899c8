import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.ndimage import gaussian_filter1d

from src.utils.errors import ConfigError, DimensionError
from src.utils.helpers import derive_rng


@dataclass
class NoiseModel:

    gaussian_sigma: float = 0.05
    streak_sigma: float = 0.03
    ndct_sigma: float = 0.01
    streak_width: float = 1.0
    seed: int = 0

    def __post_init__(self):

        for name in ('gaussian_sigma', 'streak_sigma', 'ndct_sigma', 'streak_width'):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"must be finite and non-negative, got {value}", path=name)
            setattr(self, name, value)
        self.seed = int(self.seed)

    def to_dict(self) -> Dict:

        return {
            'gaussian_sigma': self.gaussian_sigma,
            'streak_sigma': self.streak_sigma,
            'ndct_sigma': self.ndct_sigma,
            'streak_width': self.streak_width,
            'seed': self.seed
        }


@dataclass
class PairedSample:
    """Aligned [C, H, W] arrays; r is y - x as stored, never recomputed from noise."""

    x: np.ndarray
    y: np.ndarray
    r: np.ndarray

    @classmethod
    def from_pair(cls, x: np.ndarray, y: np.ndarray) -> 'PairedSample':

        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape:
            raise DimensionError(f"x {x.shape} and y {y.shape} must be aligned")
        return cls(x=x, y=y, r=y - x)


def streak_field(height: int, width: int, rng: np.random.Generator, smoothing: float = 1.0) -> np.ndarray:
    """Rank-1 vertical streaks: one N(0, 1) per column, smoothed across columns, unit variance."""

    draws = rng.standard_normal(width)

    if smoothing > 0:
        draws = gaussian_filter1d(draws, smoothing, mode='wrap')
        impulse = np.zeros(width)
        impulse[0] = 1.0
        gain = np.sqrt(np.sum(gaussian_filter1d(impulse, smoothing, mode='wrap') ** 2))
        draws = draws / gain

    return np.broadcast_to(draws[None, :], (height, width)).copy()


def corrupt(
    x_clean: np.ndarray,
    model: NoiseModel,
    rng: Optional[np.random.Generator] = None
) -> PairedSample:

    x_clean = np.asarray(x_clean, dtype=np.float64)
    if x_clean.ndim != 3:
        raise DimensionError(f"clean image must be [C, H, W], got {x_clean.shape}")

    if rng is None:
        rng = derive_rng(model.seed)

    _, height, width = x_clean.shape

    x = x_clean + model.ndct_sigma * rng.standard_normal(x_clean.shape)
    noise = model.gaussian_sigma * rng.standard_normal(x_clean.shape)
    noise = noise + model.streak_sigma * streak_field(height, width, rng, model.streak_width)[None, :, :]

    y = x + noise
    return PairedSample(x=x, y=y, r=y - x)
