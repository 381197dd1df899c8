import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from src.utils.errors import ConfigError

Arrays = Dict[str, np.ndarray]


def global_norm(grads: Arrays) -> float:

    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_grad_norm(grads: Arrays, max_norm: float) -> Tuple[Arrays, float]:
    """Scale all gradients by max_norm / (norm + 1e-6) when that factor is below 1."""

    total = global_norm(grads)
    coef = max_norm / (total + 1e-6)

    if coef < 1.0:
        return {name: g * coef for name, g in grads.items()}, total
    return dict(grads), total


@dataclass
class AdamW:

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):

        for name in ('beta1', 'beta2'):
            value = float(getattr(self, name))
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"must lie in [0, 1), got {value}", path=name)
        if not self.eps > 0:
            raise ConfigError(f"must be positive, got {self.eps}", path="eps")
        if not self.weight_decay >= 0:
            raise ConfigError(f"must be non-negative, got {self.weight_decay}", path="weight_decay")

    def init_moments(self, params: Arrays) -> Tuple[Arrays, Arrays]:

        return (
            {name: np.zeros_like(p) for name, p in params.items()},
            {name: np.zeros_like(p) for name, p in params.items()}
        )

    def step(
        self,
        params: Arrays,
        grads: Arrays,
        first: Arrays,
        second: Arrays,
        step: int,
        lr: float
    ) -> Tuple[Arrays, Arrays, Arrays]:
        """One decoupled-weight-decay update; ``step`` counts from 1. Inputs are not mutated."""

        correction1 = 1.0 - self.beta1 ** step
        correction2 = 1.0 - self.beta2 ** step

        new_params, new_first, new_second = {}, {}, {}

        for name, p in params.items():
            g = grads[name]

            m = self.beta1 * first[name] + (1.0 - self.beta1) * g
            v = self.beta2 * second[name] + (1.0 - self.beta2) * (g * g)

            m_hat = m / correction1
            v_hat = v / correction2

            updated = p * (1.0 - lr * self.weight_decay)
            updated = updated - lr * m_hat / (np.sqrt(v_hat) + self.eps)

            new_params[name] = updated
            new_first[name] = m
            new_second[name] = v

        return new_params, new_first, new_second
