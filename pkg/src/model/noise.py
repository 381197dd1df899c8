from typing import Sequence

import numpy as np

from src.utils.helpers import derive_rng


class NoiseSource:
    """Standard-normal draws for the generator's noise channel, reproducible per seed."""

    def __init__(self, seed: int = 0):

        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)

    @classmethod
    def for_stream(cls, seed: int, *stream: int) -> 'NoiseSource':

        source = cls(seed)
        source._rng = derive_rng(seed, *stream)
        return source

    def draw(self, shape: Sequence[int]) -> np.ndarray:

        return self._rng.standard_normal(tuple(shape))
