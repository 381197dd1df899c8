"""Exponential similarity kernel k(r, r') = exp(-||r - r'|| / tau) and pairwise distances."""

from enum import Enum

import numpy as np

from src.utils.errors import ContractError, DimensionError

# Squared distances below this fraction of ||a||^2 + ||b||^2 are recomputed directly.
NEAR_PAIR_RATIO = 1e-6


class NormScaling(Enum):

    RAW = "raw"
    PER_DIMENSION = "per-dimension"


def as_norm_scaling(value) -> NormScaling:

    if isinstance(value, NormScaling):
        return value
    try:
        return NormScaling(value)
    except ValueError:
        valid = ", ".join(member.value for member in NormScaling)
        raise ContractError(f"unknown norm scaling {value!r} (valid: {valid})")


def _check_tau(tau: float):

    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")


def distance_scale(dimension: int, norm_scaling) -> float:

    if as_norm_scaling(norm_scaling) is NormScaling.PER_DIMENSION:
        return 1.0 / np.sqrt(dimension)
    return 1.0


def kernel(r, r_prime, tau: float, norm_scaling=NormScaling.PER_DIMENSION) -> float:

    _check_tau(tau)
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    r_prime = np.asarray(r_prime, dtype=np.float64).reshape(-1)

    if r.shape != r_prime.shape:
        raise DimensionError(f"kernel arguments differ in length: {r.size} vs {r_prime.size}")

    distance = np.linalg.norm(r - r_prime) * distance_scale(r.size, norm_scaling)
    return float(np.exp(-distance / tau))


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows of a [n, D] and b [m, D].

    Expanded form ||a||^2 + ||b||^2 - 2 a.b through one matrix product,
    clamped at zero. Near-coincident pairs, where the expanded form loses
    all relative precision, are recomputed from the explicit difference so
    identical rows give exactly zero.
    """

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)

    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"pairwise_distances needs [n, D] and [m, D], got {a.shape} and {b.shape}")

    a_sq = np.einsum('ij,ij->i', a, a)
    b_sq = np.einsum('ij,ij->i', b, b)
    magnitude = a_sq[:, None] + b_sq[None, :]

    squared = magnitude - 2.0 * (a @ b.T)
    np.maximum(squared, 0.0, out=squared)

    rows, cols = np.nonzero(squared <= NEAR_PAIR_RATIO * magnitude)
    if rows.size:
        diff = a[rows] - b[cols]
        squared[rows, cols] = np.einsum('ij,ij->i', diff, diff)

    return np.sqrt(squared)


def kernel_weights(
    queries: np.ndarray,
    samples: np.ndarray,
    tau: float,
    norm_scaling=NormScaling.PER_DIMENSION
) -> np.ndarray:
    """Row-normalized kernel weights k(x_i, s_j) / Z(x_i); each row sums to one."""

    _check_tau(tau)
    queries = np.asarray(queries, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)

    if samples.shape[0] == 0:
        raise ContractError("kernel weights need a non-empty sample set")

    distances = pairwise_distances(queries, samples) * distance_scale(queries.shape[1], norm_scaling)
    logits = -distances / tau
    # Shifting by the row max cancels in the normalization and keeps Z > 0 at small tau.
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=1, keepdims=True)
