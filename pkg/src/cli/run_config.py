"""Run configuration for every command: one defaults table, strict keys.

A document only overrides keys that exist in DEFAULTS; anything else is
rejected with its dotted path. ``None`` defaults mark optional values.
"""

import copy
import logging
import os
from typing import Any, Dict, List, Mapping, Optional

from src.data.corruption import NoiseModel
from src.drift.losses import DriftConfig
from src.model.unet import GeneratorConfig
from src.training.presets import L1, resolve_variant
from src.training.trainer import TrainConfig
from src.utils.config import get_config
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

NOISE_DEFAULTS = {
    'gaussian_sigma': 0.05,
    'streak_sigma': 0.03,
    'ndct_sigma': 0.01,
    'streak_width': 1.0
}

TRAIN_DEFAULTS = {
    'iterations': 2000,
    'lr': 1e-4,
    'decay_step': 400,
    'decay_factor': 0.5,
    'ema_decay': 0.999,
    'clip_norm': 1.0,
    'batch_size': 8,
    'patch_size': 32,
    'weight_decay': 0.0,
    'seed': 0,
    'log_every': 50,
    'prefetch': True,
    'variant': 'smooth',
    'temperatures': None,
    'lambda': None,
    'norm_scaling': 'per-dimension',
    'generator': {
        'base_channels': 16,
        'depth': 2
    }
}

EVAL_DEFAULTS = {
    'pred_key': 'x',
    'ref_key': 'x',
    'data_range': 1.0,
    'roi_size': 16,
    'roi_count': 4,
    'pixel_spacing': None,
    'flatness_factor': 3.0,
    'band': [0.1, 0.5]
}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    'simulate': {
        'seed': 0,
        'image_size': 64,
        'train_count': 64,
        'test_count': 16,
        'noise': NOISE_DEFAULTS,
        'preview_dir': None
    },
    'train': TRAIN_DEFAULTS,
    'denoise': {
        'seed': 0,
        'use_ema': True,
        'input_key': 'y',
        'preview_dir': None
    },
    'eval': EVAL_DEFAULTS,
    'sweep': {
        'train': TRAIN_DEFAULTS,
        'eval': EVAL_DEFAULTS,
        'denoise_seed': 0,
        'runs': [
            {'label': 'fine', 'variant': 'fine'},
            {'label': 'balanced', 'variant': 'balanced'},
            {'label': 'smooth', 'variant': 'smooth'}
        ]
    }
}

RUN_KEYS = ('label', 'variant', 'temperatures', 'lambda')


def merge(defaults: Mapping[str, Any], document: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:

    if not isinstance(document, Mapping):
        raise ConfigError(f"expected an object, got {type(document).__name__}", path=prefix or None)

    resolved = copy.deepcopy(dict(defaults))

    for key, value in document.items():
        path = f"{prefix}.{key}" if prefix else key

        if key not in defaults:
            raise ConfigError("unknown key", path=path)

        default = defaults[key]
        if isinstance(default, dict):
            resolved[key] = merge(default, value, path)
        else:
            resolved[key] = copy.deepcopy(value)

    return resolved


def load_run_config(
    command: str,
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None
) -> Dict[str, Any]:

    if command not in DEFAULTS:
        raise ConfigError(f"unknown command '{command}'")

    config = get_config()

    if path is not None:
        document = config.load_document(path)
    else:
        default_path = os.path.join(config.config_dir, f"{command}.json")
        document = config.load_document(default_path) if os.path.exists(default_path) else {}

    resolved = merge(DEFAULTS[command], document, command)

    if overrides:
        cleaned = {key: value for key, value in overrides.items() if value is not None}
        resolved = merge(DEFAULTS[command], _deep_update(resolved, cleaned), command)

    return resolved


def _deep_update(base: Dict[str, Any], updates: Mapping[str, Any]) -> Dict[str, Any]:

    result = copy.deepcopy(base)
    for key, value in updates.items():
        if isinstance(value, Mapping) and isinstance(result.get(key), dict):
            result[key] = _deep_update(result[key], value)
        else:
            result[key] = value
    return result


def build_noise_model(resolved: Mapping[str, Any]) -> NoiseModel:

    return NoiseModel(seed=resolved['seed'], **resolved['noise'])


def build_drift_config(settings: Mapping[str, Any], path: str = "train") -> DriftConfig:

    preset = resolve_variant(settings['variant']) if settings.get('variant') is not None else None

    temperatures = settings.get('temperatures')
    lam = settings.get('lambda')

    if temperatures is None:
        if preset is None:
            raise ConfigError("set a variant or explicit temperatures", path=f"{path}.temperatures")
        temperatures = preset.temperatures
        if lam is None:
            lam = preset.lam
    elif lam is None:
        # Explicit temperatures never pick up the variant's lambda.
        lam = 0.0 if temperatures else L1.lam
        logger.info(f"No lambda given for temperatures {list(temperatures)}; using lambda={lam}")

    try:
        return DriftConfig(
            temperatures=tuple(temperatures),
            lam=float(lam),
            norm_scaling=settings.get('norm_scaling', 'per-dimension')
        )
    except ConfigError as e:
        raise ConfigError(str(e), path=path)


def build_train_config(resolved: Mapping[str, Any], path: str = "train") -> TrainConfig:

    generator = GeneratorConfig(
        base_channels=resolved['generator']['base_channels'],
        depth=resolved['generator']['depth'],
        seed=resolved['seed']
    )

    try:
        return TrainConfig(
            iterations=resolved['iterations'],
            lr=float(resolved['lr']),
            decay_step=resolved['decay_step'],
            decay_factor=float(resolved['decay_factor']),
            ema_decay=float(resolved['ema_decay']),
            clip_norm=float(resolved['clip_norm']),
            batch_size=resolved['batch_size'],
            patch_size=resolved['patch_size'],
            weight_decay=float(resolved['weight_decay']),
            drift=build_drift_config(resolved, path),
            generator=generator,
            seed=resolved['seed'],
            log_every=resolved['log_every'],
            prefetch=bool(resolved['prefetch'])
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), path=path)


def sweep_runs(resolved: Mapping[str, Any]) -> List[Dict[str, Any]]:

    runs = resolved['runs']
    if not isinstance(runs, list) or not runs:
        raise ConfigError("must be a non-empty list", path="sweep.runs")

    checked = []
    for index, run in enumerate(runs):
        path = f"sweep.runs[{index}]"
        if not isinstance(run, Mapping):
            raise ConfigError("expected an object", path=path)
        for key in run:
            if key not in RUN_KEYS:
                raise ConfigError("unknown key", path=f"{path}.{key}")
        if 'label' not in run:
            raise ConfigError("missing 'label'", path=path)
        checked.append({key: run.get(key) for key in RUN_KEYS})

    return checked
