import math
from dataclasses import dataclass, field as dataclass_field
from typing import Dict, Optional, Tuple

from src.autograd.tensor import Tensor, stop_gradient
from src.drift.field import FieldOutput, ResidualBatch, drift_field
from src.drift.kernel import NormScaling, as_norm_scaling
from src.utils.errors import ConfigError, ContractError, DimensionError


@dataclass
class DriftConfig:

    temperatures: Tuple[float, ...] = (1.0,)
    lam: float = 0.0
    norm_scaling: NormScaling = NormScaling.PER_DIMENSION

    def __post_init__(self):

        try:
            temperatures = tuple(float(t) for t in self.temperatures)
        except (TypeError, ValueError):
            raise ConfigError(f"temperatures must be numbers, got {self.temperatures!r}", path="temperatures")

        if any(not (math.isfinite(t) and t > 0) for t in temperatures):
            raise ConfigError(f"temperatures must be finite and positive, got {temperatures}", path="temperatures")
        if len(set(temperatures)) != len(temperatures):
            raise ConfigError(f"temperatures must be distinct, got {temperatures}", path="temperatures")

        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lambda must be finite and non-negative, got {self.lam}", path="lambda")
        if not temperatures and self.lam == 0:
            raise ConfigError("an empty temperature set needs lambda > 0 (pixel loss only)", path="temperatures")

        try:
            self.norm_scaling = as_norm_scaling(self.norm_scaling)
        except ContractError as e:
            raise ConfigError(str(e), path="norm_scaling")

        self.temperatures = temperatures
        self.lam = float(self.lam)

    def to_dict(self) -> Dict:

        return {
            'temperatures': list(self.temperatures),
            'lambda': self.lam,
            'norm_scaling': self.norm_scaling.value
        }


@dataclass
class LossParts:

    total: float
    drift: Dict[float, float] = dataclass_field(default_factory=dict)
    l1: Optional[float] = None

    def weighted_sum(self, lam: float) -> float:

        value = sum(self.drift.values())
        if self.l1 is not None:
            value += lam * self.l1
        return value


def drift_loss(
    generated: ResidualBatch,
    real: ResidualBatch,
    tau: float,
    norm_scaling=NormScaling.PER_DIMENSION,
    field: Optional[FieldOutput] = None
) -> Tensor:
    """(1/B) sum_i ||r_i - stopgrad(r_i + V_i)||^2; its value is mean ||V_i||^2.

    Pass ``field`` to reuse a precomputed field. The target is then frozen at
    the batch the field was evaluated on, so the loss varies with the current
    samples as a plain quadratic.
    """

    if field is None:
        field = drift_field(generated, real, tau, norm_scaling)

    samples = generated.samples
    if field.drift.shape != samples.shape:
        raise DimensionError(f"field shape {field.drift.shape} does not match batch {samples.shape}")

    anchor = samples if field.base is None else field.base
    if anchor.shape != samples.shape:
        raise DimensionError(f"field base shape {anchor.shape} does not match batch {samples.shape}")

    target = stop_gradient(anchor + field.drift)
    return (samples - target).square().sum() / generated.size


def pixel_loss(generated: ResidualBatch, real: ResidualBatch) -> Tensor:

    if generated.samples.shape != real.samples.shape:
        raise DimensionError(
            f"pixel loss needs index-aligned batches, got {generated.samples.shape} and {real.samples.shape}"
        )

    return (generated.samples - real.samples).abs().mean()


def compute_fields(
    generated: ResidualBatch,
    real: ResidualBatch,
    cfg: DriftConfig
) -> Dict[float, FieldOutput]:

    return {
        tau: drift_field(generated, real, tau, cfg.norm_scaling)
        for tau in cfg.temperatures
    }


def compute_objective(
    generated: ResidualBatch,
    real: ResidualBatch,
    cfg: DriftConfig,
    fields: Optional[Dict[float, FieldOutput]] = None
) -> Tuple[Tensor, LossParts]:

    if fields is None:
        fields = compute_fields(generated, real, cfg)

    total = None
    parts = LossParts(total=0.0)

    for tau in cfg.temperatures:
        term = drift_loss(generated, real, tau, cfg.norm_scaling, field=fields[tau])
        parts.drift[tau] = term.item()
        total = term if total is None else total + term

    if cfg.lam > 0:
        l1 = pixel_loss(generated, real)
        parts.l1 = l1.item()
        weighted = cfg.lam * l1
        total = weighted if total is None else total + weighted

    parts.total = total.item()
    return total, parts


def total_loss(
    generated: ResidualBatch,
    real: ResidualBatch,
    cfg: DriftConfig,
    fields: Optional[Dict[float, FieldOutput]] = None
) -> Tensor:

    return compute_objective(generated, real, cfg, fields)[0]
