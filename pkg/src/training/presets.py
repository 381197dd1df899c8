from dataclasses import dataclass
from typing import Dict, Tuple

from src.drift.kernel import NormScaling
from src.drift.losses import DriftConfig
from src.utils.errors import ConfigError


@dataclass(frozen=True)
class VariantPreset:

    name: str
    temperatures: Tuple[float, ...]
    lam: float

    def drift_config(self, norm_scaling=NormScaling.PER_DIMENSION) -> DriftConfig:

        return DriftConfig(temperatures=self.temperatures, lam=self.lam, norm_scaling=norm_scaling)


FINE = VariantPreset("fine", (1.0, 1.5), 0.0)
BALANCED = VariantPreset("balanced", (0.2, 1.0), 0.0)
SMOOTH = VariantPreset("smooth", (1.0,), 0.01)
# Pixel loss alone, no drift term.
L1 = VariantPreset("l1", (), 0.01)

PRESETS: Dict[str, VariantPreset] = {preset.name: preset for preset in (FINE, BALANCED, SMOOTH, L1)}


def resolve_variant(name: str) -> VariantPreset:

    try:
        return PRESETS[name]
    except KeyError:
        valid = ", ".join(PRESETS)
        raise ConfigError(f"unknown variant '{name}' (valid: {valid})", path="variant")
