"""Residual drifting field: kernel-weighted attraction toward real residuals
minus the same estimator applied to the generated residuals (repulsion).

Everything here runs on plain arrays outside the gradient graph; the field
is a constant with respect to the generator parameters.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from src.autograd.tensor import Tensor, as_tensor
from src.drift.kernel import NormScaling, kernel_weights
from src.utils.errors import ContractError, DimensionError


class ResidualKind(Enum):

    REAL = "real"
    GENERATED = "generated"


class ResidualBatch:

    def __init__(self, samples, kind: ResidualKind):

        samples = as_tensor(samples)

        if samples.ndim != 4:
            raise DimensionError(f"residual batch must be [B, C, H, W], got {samples.shape}")
        if samples.shape[0] < 1:
            raise ContractError("residual batch must hold at least one sample")

        if kind is ResidualKind.REAL and samples.requires_grad:
            raise ContractError("real residual batches must be detached from the graph")

        self.samples = samples
        self.kind = kind

    @classmethod
    def real(cls, samples) -> 'ResidualBatch':

        if isinstance(samples, Tensor):
            samples = samples.data
        return cls(Tensor(samples), ResidualKind.REAL)

    @classmethod
    def generated(cls, samples: Tensor) -> 'ResidualBatch':

        return cls(samples, ResidualKind.GENERATED)

    @property
    def size(self) -> int:

        return self.samples.shape[0]

    @property
    def sample_shape(self):

        return self.samples.shape[1:]

    def flat(self) -> np.ndarray:

        return self.samples.data.reshape(self.size, -1)


@dataclass
class FieldOutput:
    """Field at one generated batch; ``base`` holds that batch so the target can stay frozen."""

    drift: Tensor
    attraction: Tensor
    repulsion: Tensor
    base: Optional[Tensor] = None


def _as_matrix(vectors, name: str) -> np.ndarray:

    matrix = np.asarray(vectors, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2:
        raise DimensionError(f"{name} must be a list of flat vectors")
    if matrix.shape[0] == 0:
        raise ContractError(f"{name} must be non-empty")
    return matrix


def mean_shift(
    queries: np.ndarray,
    samples: np.ndarray,
    tau: float,
    norm_scaling=NormScaling.PER_DIMENSION
) -> np.ndarray:
    """(1/Z(x)) * sum_j k(x, s_j) (s_j - x) for every query row x.

    Attraction and repulsion are both this estimator; only the sample set differs.
    """

    queries = _as_matrix(queries, "queries")
    samples = _as_matrix(samples, "samples")

    if queries.shape[1] != samples.shape[1]:
        raise DimensionError(f"query dimension {queries.shape[1]} != sample dimension {samples.shape[1]}")

    weights = kernel_weights(queries, samples, tau, norm_scaling)
    return weights @ samples - weights.sum(axis=1, keepdims=True) * queries


def attraction(x, targets: Sequence, tau: float, norm_scaling=NormScaling.PER_DIMENSION) -> np.ndarray:

    x = np.asarray(x, dtype=np.float64).reshape(-1)
    targets = _as_matrix(targets, "targets")
    return mean_shift(x[None, :], targets, tau, norm_scaling)[0]


def repulsion(x, peers: Sequence, tau: float, norm_scaling=NormScaling.PER_DIMENSION) -> np.ndarray:

    x = np.asarray(x, dtype=np.float64).reshape(-1)
    peers = _as_matrix(peers, "peers")
    return mean_shift(x[None, :], peers, tau, norm_scaling)[0]


def field_between(
    queries,
    attractors,
    repellers,
    tau: float,
    norm_scaling=NormScaling.PER_DIMENSION
) -> np.ndarray:
    """V_{A,B}(x) = attraction toward A minus repulsion from B, per query row."""

    return mean_shift(queries, attractors, tau, norm_scaling) - mean_shift(queries, repellers, tau, norm_scaling)


def drift_field(
    generated: ResidualBatch,
    real: ResidualBatch,
    tau: float,
    norm_scaling=NormScaling.PER_DIMENSION
) -> FieldOutput:

    if generated.sample_shape != real.sample_shape:
        raise DimensionError(
            f"generated residuals {generated.sample_shape} and real residuals {real.sample_shape} differ in shape"
        )

    shape = generated.samples.shape
    gen_flat = generated.flat()
    real_flat = real.flat()

    attract = mean_shift(gen_flat, real_flat, tau, norm_scaling)
    # The query set is the generated batch itself: j runs over all of it, self included.
    repel = mean_shift(gen_flat, gen_flat, tau, norm_scaling)

    return FieldOutput(
        drift=Tensor._wrap((attract - repel).reshape(shape)),
        attraction=Tensor._wrap(attract.reshape(shape)),
        repulsion=Tensor._wrap(repel.reshape(shape)),
        base=Tensor._wrap(generated.samples.data.copy())
    )
