import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from src.data.corruption import NoiseModel, PairedSample, corrupt
from src.data.phantom import random_phantom_spec, render_phantom
from src.utils.errors import ContractError, DimensionError
from src.utils.helpers import derive_rng

logger = logging.getLogger(__name__)

SPLIT_STREAMS = {'train': 0, 'test': 1}


class TrainingBatch(NamedTuple):

    y: np.ndarray
    x: np.ndarray
    r: np.ndarray


class PairedDataset:
    """Stacked [N, 1, H, W] clean/noisy pairs for one split."""

    def __init__(self, x: np.ndarray, y: np.ndarray):

        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)

        if x.ndim != 4 or x.shape != y.shape:
            raise DimensionError(f"dataset needs aligned [N, C, H, W] arrays, got {x.shape} and {y.shape}")

        self.x = x
        self.y = y
        self.r = y - x

    @classmethod
    def from_samples(cls, samples: Sequence[PairedSample]) -> 'PairedDataset':

        if not samples:
            raise ContractError("cannot build a dataset from zero samples")
        return cls(np.stack([s.x for s in samples]), np.stack([s.y for s in samples]))

    def __len__(self) -> int:

        return self.x.shape[0]

    @property
    def image_shape(self):

        return self.x.shape[1:]

    def sample(self, index: int) -> PairedSample:

        return PairedSample(x=self.x[index], y=self.y[index], r=self.r[index])

    def samples(self) -> List[PairedSample]:

        return [self.sample(i) for i in range(len(self))]

    def residual_stats(self) -> Dict[str, float]:

        return {
            'count': len(self),
            'mean': float(np.mean(self.r)) if self.r.size else 0.0,
            'std': float(np.std(self.r)) if self.r.size else 0.0
        }


def simulate_sample(index: int, size: int, model: NoiseModel, seed: int, split: str = 'train') -> PairedSample:

    stream = SPLIT_STREAMS[split]
    spec = random_phantom_spec(size, derive_rng(seed, stream, index, 0))
    clean = render_phantom(spec)
    return corrupt(clean, model, derive_rng(seed, stream, index, 1))


def simulate_dataset(
    count: int,
    size: int,
    model: NoiseModel,
    seed: int,
    split: str = 'train',
    threads: Optional[int] = None
) -> PairedDataset:

    if split not in SPLIT_STREAMS:
        raise ContractError(f"unknown split '{split}', expected one of {sorted(SPLIT_STREAMS)}")
    if count < 1:
        raise ContractError(f"split '{split}' needs at least one sample, got {count}")

    with ThreadPoolExecutor(max_workers=threads) as pool:
        samples = list(pool.map(lambda i: simulate_sample(i, size, model, seed, split), range(count)))

    logger.debug(f"Simulated {count} {split} pairs at {size}x{size}")
    return PairedDataset.from_samples(samples)


def _as_pool(pool: Union[PairedDataset, Sequence[PairedSample]]) -> List[PairedSample]:

    if isinstance(pool, PairedDataset):
        return pool.samples()
    return list(pool)


def make_batch(
    pool: Union[PairedDataset, Sequence[PairedSample]],
    batch_size: int,
    patch: int,
    seed: Union[int, np.random.Generator]
) -> TrainingBatch:
    """Draw B random aligned patches; r is re-derived as y - x on the cropped arrays."""

    samples = _as_pool(pool)
    if not samples:
        raise ContractError("cannot draw a batch from an empty pool")
    if batch_size < 1:
        raise ContractError(f"batch size must be positive, got {batch_size}")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    ys, xs = [], []
    for _ in range(batch_size):
        sample = samples[int(rng.integers(len(samples)))]
        _, height, width = sample.x.shape

        if patch < 1 or patch > height or patch > width:
            raise ContractError(f"patch {patch} does not fit a {height}x{width} image")

        top = int(rng.integers(0, height - patch + 1))
        left = int(rng.integers(0, width - patch + 1))
        ys.append(sample.y[:, top:top + patch, left:left + patch])
        xs.append(sample.x[:, top:top + patch, left:left + patch])

    y_batch = np.stack(ys)
    x_batch = np.stack(xs)
    return TrainingBatch(y=y_batch, x=x_batch, r=y_batch - x_batch)
