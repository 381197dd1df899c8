from typing import Dict, Optional

import numpy as np

from src.utils.errors import ConfigError

Arrays = Dict[str, np.ndarray]


def warmup_decay(decay: float, step: int) -> float:
    """Effective decay at step t: min(decay, (1 + t) / (10 + t))."""

    return min(decay, (1.0 + step) / (10.0 + step))


class ExponentialMovingAverage:

    def __init__(self, decay: float):

        if not 0.0 <= decay < 1.0:
            raise ConfigError(f"must lie in [0, 1), got {decay}", path="ema_decay")

        self.decay = decay
        self.shadow: Arrays = {}

    def register(self, params: Arrays) -> Arrays:

        self.shadow = {name: np.array(p, dtype=np.float64, copy=True) for name, p in params.items()}
        return self.shadow

    def load(self, shadow: Arrays):

        self.shadow = {name: np.array(p, dtype=np.float64, copy=True) for name, p in shadow.items()}

    def update(self, params: Arrays, step: Optional[int] = None) -> Arrays:
        # With ``step`` the decay ramps up through warmup_decay; without it the fixed decay applies.

        decay = self.decay if step is None else warmup_decay(self.decay, step)
        self.shadow = {
            name: decay * self.shadow[name] + (1.0 - decay) * params[name]
            for name in self.shadow
        }
        return self.shadow

    def state_dict(self) -> Arrays:

        return dict(self.shadow)
