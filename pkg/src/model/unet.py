"""Conditional one-step generator f(eps, y): a compact U-Net over the autograd core.

Layout for depth d and widths w_l = base_channels * 2**l:

    conv_in  3x3  in_channels -> w_0          enc0  3x3  w_0 -> w_0
    down{l}  3x3 stride 2  w_{l-1} -> w_l     enc{l} 3x3 w_l -> w_l        (l = 1..d)
    up{l}    2x2 transposed  w_l -> w_{l-1}   dec{l} 3x3 2*w_{l-1} -> w_{l-1}  (l = d..1)
    head     1x1  w_0 -> out_channels

Every conv but the head is followed by SiLU; up{l} output is concatenated
with the level l-1 skip before dec{l}. No normalization layers.

Parameter count: sum over layers of (out * in * k * k + out), i.e. for the
default (16, depth 2): 105329.
"""

import logging
import math
import threading
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Tuple

import numpy as np

from src.autograd.functional import concat, conv2d, conv_transpose2d
from src.autograd.tensor import Tensor, as_tensor, no_grad
from src.model.noise import NoiseSource
from src.utils.errors import ConfigError, DimensionError

Params = Dict[str, Tensor]


@dataclass
class GeneratorConfig:

    base_channels: int = 16
    depth: int = 2
    in_channels: int = 2
    out_channels: int = 1
    seed: int = 0

    def __post_init__(self):

        for name in ('base_channels', 'in_channels', 'out_channels'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"must be a positive integer, got {getattr(self, name)}", path=name)
        if int(self.depth) < 0:
            raise ConfigError(f"must be non-negative, got {self.depth}", path="depth")
        if int(self.in_channels) != 2:
            raise ConfigError("the generator takes exactly noise + condition (2 channels)", path="in_channels")

        self.base_channels = int(self.base_channels)
        self.depth = int(self.depth)
        self.in_channels = int(self.in_channels)
        self.out_channels = int(self.out_channels)
        self.seed = int(self.seed)

    def to_dict(self) -> Dict:

        return {
            'base_channels': self.base_channels,
            'depth': self.depth,
            'in_channels': self.in_channels,
            'out_channels': self.out_channels,
            'seed': self.seed
        }


class LayerSpec(NamedTuple):

    name: str
    transposed: bool
    in_channels: int
    out_channels: int
    kernel: int

    @property
    def weight_shape(self) -> Tuple[int, ...]:

        if self.transposed:
            return (self.in_channels, self.out_channels, self.kernel, self.kernel)
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def fan_in(self) -> int:
        # A stride-2 transposed 2x2 conv feeds each output pixel from one tap per input channel.

        if self.transposed:
            return self.in_channels
        return self.in_channels * self.kernel * self.kernel


def layer_specs(cfg: GeneratorConfig) -> List[LayerSpec]:

    widths = [cfg.base_channels * 2 ** level for level in range(cfg.depth + 1)]

    specs = [
        LayerSpec('conv_in', False, cfg.in_channels, widths[0], 3),
        LayerSpec('enc0', False, widths[0], widths[0], 3),
    ]

    for level in range(1, cfg.depth + 1):
        specs.append(LayerSpec(f'down{level}', False, widths[level - 1], widths[level], 3))
        specs.append(LayerSpec(f'enc{level}', False, widths[level], widths[level], 3))

    for level in range(cfg.depth, 0, -1):
        specs.append(LayerSpec(f'up{level}', True, widths[level], widths[level - 1], 2))
        specs.append(LayerSpec(f'dec{level}', False, 2 * widths[level - 1], widths[level - 1], 3))

    specs.append(LayerSpec('head', False, widths[0], cfg.out_channels, 1))
    return specs


def parameter_shapes(cfg: GeneratorConfig) -> Dict[str, Tuple[int, ...]]:

    shapes = {}
    for spec in layer_specs(cfg):
        shapes[f'{spec.name}.weight'] = spec.weight_shape
        shapes[f'{spec.name}.bias'] = (spec.out_channels,)
    return shapes


def parameter_count(cfg: GeneratorConfig) -> int:

    return sum(
        spec.out_channels * spec.in_channels * spec.kernel * spec.kernel + spec.out_channels
        for spec in layer_specs(cfg)
    )


def init_params(cfg: GeneratorConfig) -> Dict[str, np.ndarray]:
    """Kaiming fan-in normal weights (std sqrt(2 / fan_in)), zero biases."""

    rng = np.random.default_rng(cfg.seed)
    params = {}

    for spec in layer_specs(cfg):
        std = math.sqrt(2.0 / spec.fan_in)
        params[f'{spec.name}.weight'] = rng.standard_normal(spec.weight_shape) * std
        params[f'{spec.name}.bias'] = np.zeros(spec.out_channels)

    return params


class UNetGenerator:

    def __init__(self, config: GeneratorConfig):

        self.config = config
        self.logger = logging.getLogger(__name__)
        self.specs = {spec.name: spec for spec in layer_specs(config)}
        self.evaluations = 0
        self._lock = threading.Lock()

    def init_params(self) -> Dict[str, np.ndarray]:

        return init_params(self.config)

    def reset_counter(self):

        with self._lock:
            if self.evaluations:
                self.logger.debug(f"Resetting generator evaluation counter at {self.evaluations}")
            self.evaluations = 0

    def check_input(self, shape: Tuple[int, ...]):

        if len(shape) != 4:
            raise DimensionError(f"generator input must be [B, C, H, W], got {shape}")

        factor = 2 ** self.config.depth
        if shape[2] % factor or shape[3] % factor:
            raise DimensionError(
                f"input spatial dims {shape[2]}x{shape[3]} are not divisible by 2^depth = {factor}"
            )

    def _conv(self, h: Tensor, params: Params, name: str, stride: int = 1) -> Tensor:

        spec = self.specs[name]
        return conv2d(
            h,
            params[f'{name}.weight'],
            params[f'{name}.bias'],
            stride=stride,
            padding=spec.kernel // 2
        )

    def forward(self, eps, y, params: Params) -> Tensor:

        eps = as_tensor(eps)
        y = as_tensor(y)

        if eps.shape != y.shape:
            raise DimensionError(f"noise {eps.shape} and condition {y.shape} must have the same shape")
        self.check_input(y.shape)

        with self._lock:
            self.evaluations += 1

        depth = self.config.depth

        h = self._conv(concat([eps, y], axis=1), params, 'conv_in').silu()
        h = self._conv(h, params, 'enc0').silu()
        skips = [h]

        for level in range(1, depth + 1):
            h = self._conv(h, params, f'down{level}', stride=2).silu()
            h = self._conv(h, params, f'enc{level}').silu()
            skips.append(h)

        skips.pop()

        for level in range(depth, 0, -1):
            h = conv_transpose2d(h, params[f'up{level}.weight'], params[f'up{level}.bias'], stride=2)
            h = concat([h, skips.pop()], axis=1)
            h = self._conv(h, params, f'dec{level}').silu()

        return self._conv(h, params, 'head')

    def denoise(self, y, params: Params, noise: NoiseSource) -> Tensor:
        """x_hat = y - f(eps, y) with a fresh eps: one generator evaluation."""

        y = as_tensor(y)
        eps = Tensor(noise.draw(y.shape))

        with no_grad():
            residual = self.forward(eps, y, params)

        return Tensor._wrap(y.data - residual.data)


def as_param_tensors(params: Dict[str, np.ndarray], requires_grad: bool = False) -> Params:

    return {name: Tensor(value, requires_grad=requires_grad) for name, value in params.items()}
