import json
import logging
import os
import time
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from src.cli.run_config import build_noise_model, build_train_config, sweep_runs
from src.data.dataset import PairedDataset, simulate_dataset
from src.metrics.export import (
    export_png_series,
    write_metrics_csv,
    write_profile_csv,
    write_sweep_csv,
    write_timing_csv,
)
from src.metrics.quality import report
from src.metrics.spectrum import nps, rps, select_flat_rois
from src.model.noise import NoiseSource
from src.model.unet import GeneratorConfig, UNetGenerator, as_param_tensors, parameter_shapes
from src.storage import formats
from src.storage.archive import load_images, save_images
from src.training.state import Checkpoint, load_checkpoint, save_checkpoint
from src.training.trainer import Trainer
from src.utils.config import get_config
from src.utils.errors import ContractError, FormatError
from src.utils.helpers import mean_std, safe_dict_get

logger = logging.getLogger(__name__)

TRAIN_FILE = "train.rddi"
TEST_FILE = "test.rddi"
DENOISE_STREAM = 2


def echo_config(command: str, resolved: Mapping[str, Any]):

    logger.info(f"{command} config: {json.dumps(resolved, sort_keys=True)}")


def split_path(dataset: str, filename: str) -> str:

    return os.path.join(dataset, filename) if os.path.isdir(dataset) else dataset


def load_dataset(path: str) -> PairedDataset:

    images = load_images(path)
    for key in (formats.IMAGE_CLEAN, formats.IMAGE_NOISY):
        if key not in images:
            raise FormatError(f"{path}: image archive has no '{key}' tensor")
    return PairedDataset(images[formats.IMAGE_CLEAN], images[formats.IMAGE_NOISY])


def cmd_simulate(config: Mapping[str, Any], out_dir: str) -> Dict[str, Dict[str, float]]:

    echo_config("simulate", config)
    model = build_noise_model(config)
    threads = get_config().get_threads()

    os.makedirs(out_dir, exist_ok=True)
    summary = {}

    for split, count, filename in (
        ('train', config['train_count'], TRAIN_FILE),
        ('test', config['test_count'], TEST_FILE),
    ):
        dataset = simulate_dataset(count, config['image_size'], model, config['seed'], split, threads)
        save_images(os.path.join(out_dir, filename), dataset.x, dataset.y)

        stored = load_dataset(os.path.join(out_dir, filename))
        stats = stored.residual_stats()
        summary[split] = stats
        print(f"{split}: {stats['count']} pairs, residual mean={stats['mean']:.6f} std={stats['std']:.6f}")

        if config['preview_dir']:
            export_png_series(os.path.join(config['preview_dir'], split), stored.y, prefix="ldct")

    return summary


def cmd_train(
    config: Mapping[str, Any],
    dataset: str,
    out_checkpoint: str,
    log_file: Optional[str] = None,
    resume: Optional[str] = None
) -> Checkpoint:

    echo_config("train", config)
    cfg = build_train_config(config)
    data = load_dataset(split_path(dataset, TRAIN_FILE))

    log_file = log_file or f"{out_checkpoint}.log"
    trainer = Trainer(cfg, data, log_file=log_file)

    state = load_checkpoint(resume).to_state() if resume else None
    state = trainer.train(state)

    checkpoint = trainer.checkpoint(state)
    save_checkpoint(checkpoint, out_checkpoint)

    print(f"Checkpoint at iteration {state.iteration} written to {out_checkpoint}")
    return checkpoint


def generator_from_checkpoint(checkpoint: Checkpoint, use_ema: bool = True):

    settings = safe_dict_get(checkpoint.config, 'generator', default={})
    gen_cfg = GeneratorConfig(**settings) if settings else GeneratorConfig()
    weights = checkpoint.weights(use_ema)

    expected = parameter_shapes(gen_cfg)
    missing = sorted(set(expected) - set(weights))
    extra = sorted(set(weights) - set(expected))
    if missing or extra:
        raise FormatError(f"checkpoint does not match the generator config (missing: {missing}, unexpected: {extra})")

    wrong = [
        f"{name} {weights[name].shape} != {shape}"
        for name, shape in expected.items()
        if weights[name].shape != shape
    ]
    if wrong:
        raise FormatError(f"checkpoint tensor shapes do not match the generator config: {', '.join(wrong)}")

    return UNetGenerator(gen_cfg), as_param_tensors(weights)


def denoise_images(model: UNetGenerator, params, images: np.ndarray, seed: int):
    """One generator evaluation per image; eps for image i comes from stream (seed, i)."""

    outputs, timings, evaluations = [], [], []

    for index in range(images.shape[0]):
        before = model.evaluations
        start = time.perf_counter()
        denoised = model.denoise(images[index:index + 1], params, NoiseSource.for_stream(seed, index, DENOISE_STREAM))
        timings.append(time.perf_counter() - start)
        evaluations.append(model.evaluations - before)
        outputs.append(denoised.data[0])

    return np.stack(outputs), timings, evaluations


def cmd_denoise(
    config: Mapping[str, Any],
    checkpoint_path: str,
    input_path: str,
    output_path: str,
    timing_path: Optional[str] = None
) -> Dict[str, Any]:

    echo_config("denoise", config)

    model, params = generator_from_checkpoint(load_checkpoint(checkpoint_path), config['use_ema'])
    images = load_images(input_path)
    key = config['input_key']
    if key not in images:
        raise FormatError(f"{input_path}: image archive has no '{key}' tensor")

    model.reset_counter()
    outputs, timings, evaluations = denoise_images(model, params, images[key], config['seed'])

    save_images(output_path, outputs)
    write_timing_csv(timing_path or f"{output_path}.timing.csv", timings, evaluations)

    if config['preview_dir']:
        export_png_series(config['preview_dir'], outputs, prefix="denoised")

    latency = mean_std(timings)
    print(
        f"Denoised {outputs.shape[0]} images with {model.evaluations} generator evaluations, "
        f"{latency['mean'] * 1000:.2f} ± {latency['std'] * 1000:.2f} ms per image"
    )

    return {'count': outputs.shape[0], 'evaluations': model.evaluations, 'latency': latency}


def evaluate_sets(preds: np.ndarray, refs: np.ndarray, options: Mapping[str, Any]) -> Dict[str, Any]:

    if preds.shape[0] != refs.shape[0]:
        raise ContractError(f"misaligned sets: {preds.shape[0]} predictions vs {refs.shape[0]} references")

    metrics = report(preds, refs, options['data_range'])
    _, rps_profile = rps(preds, refs, options['pixel_spacing'])

    rois = select_flat_rois(refs.mean(axis=0), options['roi_size'], options['roi_count'])
    nps_profile = nps(preds, rois, options['pixel_spacing'], options['flatness_factor'])

    return {'metrics': metrics, 'rps': rps_profile, 'nps': nps_profile, 'rois': rois}


def cmd_eval(config: Mapping[str, Any], pred_path: str, ref_path: str, out_dir: str) -> Dict[str, Any]:

    echo_config("eval", config)

    preds = load_images(pred_path)
    refs = load_images(ref_path)
    for path, images, key in ((pred_path, preds, config['pred_key']), (ref_path, refs, config['ref_key'])):
        if key not in images:
            raise FormatError(f"{path}: image archive has no '{key}' tensor")

    result = evaluate_sets(preds[config['pred_key']], refs[config['ref_key']], config)

    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), result['metrics'])
    write_profile_csv(os.path.join(out_dir, "rps.csv"), result['rps'])
    write_profile_csv(os.path.join(out_dir, "nps.csv"), result['nps'])

    metrics = result['metrics']
    print(
        f"PSNR {metrics.psnr_mean:.3f} ± {metrics.psnr_std:.3f} dB, "
        f"SSIM {metrics.ssim_mean:.4f} ± {metrics.ssim_std:.4f} over {len(metrics.rows)} images"
    )
    return result


def cmd_sweep(config: Mapping[str, Any], dataset: str, out_dir: str) -> List[Dict[str, Any]]:

    echo_config("sweep", config)

    train_data = load_dataset(split_path(dataset, TRAIN_FILE))
    test_data = load_dataset(split_path(dataset, TEST_FILE))
    options = config['eval']
    low, high = options['band']

    rows = []
    for run in sweep_runs(config):
        settings = dict(config['train'])
        settings.update({'variant': run['variant'], 'temperatures': run['temperatures'], 'lambda': run['lambda']})
        cfg = build_train_config(settings, path=f"sweep.runs.{run['label']}")

        logger.info(f"Sweep run '{run['label']}': temperatures={list(cfg.drift.temperatures)} lambda={cfg.drift.lam}")
        trainer = Trainer(cfg, train_data, log_file=os.path.join(out_dir, f"{run['label']}.log"))
        state = trainer.train()
        save_checkpoint(trainer.checkpoint(state), os.path.join(out_dir, f"{run['label']}.ckpt"))

        model = UNetGenerator(cfg.generator)
        outputs, _, _ = denoise_images(model, as_param_tensors(state.ema), test_data.y, config['denoise_seed'])
        result = evaluate_sets(outputs, test_data.x, options)

        metrics = result['metrics']
        rows.append({
            'label': run['label'],
            'temperatures': " ".join(f"{t:g}" for t in cfg.drift.temperatures),
            'lambda': cfg.drift.lam,
            'psnr_mean': metrics.psnr_mean,
            'psnr_std': metrics.psnr_std,
            'ssim_mean': metrics.ssim_mean,
            'ssim_std': metrics.ssim_std,
            'nps_band_power': result['nps'].band_power(low, high)
        })
        print(f"{run['label']}: PSNR {metrics.psnr_mean:.3f} dB, SSIM {metrics.ssim_mean:.4f}")

    write_sweep_csv(os.path.join(out_dir, "sweep.csv"), rows)
    return rows
