import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.autograd.tensor import Tensor
from src.data.dataset import PairedDataset, TrainingBatch, make_batch
from src.data.prefetch import BatchPrefetcher
from src.drift.field import ResidualBatch
from src.drift.losses import DriftConfig, LossParts, compute_objective
from src.model.unet import GeneratorConfig, UNetGenerator
from src.training.ema import ExponentialMovingAverage
from src.training.optimizer import AdamW, clip_grad_norm
from src.training.schedule import lr_at
from src.training.state import Checkpoint, TrainState, quantize
from src.utils.errors import ConfigError, ContractError, NumericError
from src.utils.helpers import derive_rng
from src.utils.logger import close_logger, setup_training_log

BATCH_STREAM = 0
NOISE_STREAM = 1


@dataclass
class TrainConfig:

    iterations: int = 2000
    lr: float = 1e-4
    decay_step: int = 400
    decay_factor: float = 0.5
    ema_decay: float = 0.999
    clip_norm: float = 1.0
    batch_size: int = 8
    patch_size: int = 32
    weight_decay: float = 0.0
    drift: DriftConfig = field(default_factory=DriftConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    seed: int = 0
    log_every: int = 50
    prefetch: bool = True

    def __post_init__(self):

        if int(self.iterations) < 0:
            raise ConfigError(f"must be non-negative, got {self.iterations}", path="iterations")
        if not (math.isfinite(self.lr) and self.lr >= 0):
            raise ConfigError(f"must be finite and non-negative, got {self.lr}", path="lr")
        if int(self.decay_step) < 1:
            raise ConfigError(f"must be a positive integer, got {self.decay_step}", path="decay_step")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError(f"must lie in (0, 1], got {self.decay_factor}", path="decay_factor")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError(f"must lie in [0, 1), got {self.ema_decay}", path="ema_decay")
        if not self.clip_norm > 0:
            raise ConfigError(f"must be positive, got {self.clip_norm}", path="clip_norm")
        for name in ('batch_size', 'patch_size', 'log_every'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"must be a positive integer, got {getattr(self, name)}", path=name)

        self.iterations = int(self.iterations)
        self.decay_step = int(self.decay_step)
        self.batch_size = int(self.batch_size)
        self.patch_size = int(self.patch_size)
        self.log_every = int(self.log_every)
        self.seed = int(self.seed)

    @classmethod
    def full_scale(cls, **overrides) -> 'TrainConfig':

        settings = {'iterations': 50000, 'decay_step': 10000, 'batch_size': 24}
        settings.update(overrides)
        return cls(**settings)

    def to_dict(self) -> Dict[str, Any]:

        return {
            'iterations': self.iterations,
            'lr': self.lr,
            'decay_step': self.decay_step,
            'decay_factor': self.decay_factor,
            'ema_decay': self.ema_decay,
            'clip_norm': self.clip_norm,
            'batch_size': self.batch_size,
            'patch_size': self.patch_size,
            'weight_decay': self.weight_decay,
            'drift': self.drift.to_dict(),
            'generator': self.generator.to_dict(),
            'seed': self.seed,
            'log_every': self.log_every,
            'prefetch': self.prefetch
        }


@dataclass
class StepReport:

    iteration: int
    lr: float
    parts: LossParts
    l1: float
    grad_norm: float

    def log_line(self) -> str:

        fields = [f"iter={self.iteration}", f"lr={self.lr:.6g}", f"loss={self.parts.total:.12g}"]
        fields.extend(f"drift[τ={tau:g}]={value:.12g}" for tau, value in self.parts.drift.items())
        fields.append(f"l1={self.l1:.12g}")
        return " ".join(fields)


class Trainer:

    def __init__(self, cfg: TrainConfig, dataset, model=None, log_file: Optional[str] = None):

        self.cfg = cfg
        self.model = model if model is not None else UNetGenerator(cfg.generator)
        self.optimizer = AdamW(weight_decay=cfg.weight_decay)
        self.logger = logging.getLogger(__name__)
        self.log_file = log_file

        pool = dataset.samples() if isinstance(dataset, PairedDataset) else list(dataset)
        if not pool:
            raise ContractError("training needs a non-empty dataset")
        self.pool = pool

        self.history: List[StepReport] = []
        self.last_report: Optional[StepReport] = None
        self.iteration = 0
        self.running = False

    def initial_state(self) -> TrainState:

        params = quantize(self.model.init_params())
        adam_m, adam_v = self.optimizer.init_moments(params)
        ema = ExponentialMovingAverage(self.cfg.ema_decay).register(params)
        return TrainState(params=params, ema=ema, adam_m=adam_m, adam_v=adam_v, iteration=0)

    def batch_for(self, iteration: int) -> TrainingBatch:

        rng = derive_rng(self.cfg.seed, iteration, BATCH_STREAM)
        return make_batch(self.pool, self.cfg.batch_size, self.cfg.patch_size, rng)

    def noise_for(self, iteration: int, shape) -> np.ndarray:

        return derive_rng(self.cfg.seed, iteration, NOISE_STREAM).standard_normal(shape)

    def train_step(self, state: TrainState, batch: TrainingBatch) -> Tuple[TrainState, StepReport]:

        cfg = self.cfg
        iteration = state.iteration
        lr = lr_at(iteration, cfg)

        params = {name: Tensor(value, requires_grad=True) for name, value in state.params.items()}
        eps = Tensor(self.noise_for(iteration, batch.y.shape))

        generated = ResidualBatch.generated(self.model.forward(eps, Tensor(batch.y), params))
        real = ResidualBatch.real(batch.r)

        loss, parts = compute_objective(generated, real, cfg.drift)
        l1 = parts.l1 if parts.l1 is not None else float(np.mean(np.abs(generated.samples.data - batch.r)))

        values = [parts.total, *parts.drift.values()]
        if not all(math.isfinite(v) for v in values):
            raise NumericError("non-finite training loss", {
                'iteration': iteration,
                'temperatures': list(cfg.drift.temperatures),
                'drift': {tau: value for tau, value in parts.drift.items()},
                'l1': parts.l1,
                'loss': parts.total
            })

        loss.backward()

        grads = {
            name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for name, p in params.items()
        }
        grads, grad_norm = clip_grad_norm(grads, cfg.clip_norm)

        new_params, adam_m, adam_v = self.optimizer.step(
            state.params, grads, state.adam_m, state.adam_v, step=iteration + 1, lr=lr
        )

        new_params = quantize(new_params)
        ema = ExponentialMovingAverage(cfg.ema_decay)
        ema.load(state.ema)
        ema.update(new_params, step=iteration)

        new_state = TrainState(
            params=new_params,
            ema=ema.shadow,
            adam_m=adam_m,
            adam_v=adam_v,
            iteration=iteration + 1
        ).quantized()

        report = StepReport(iteration=iteration, lr=lr, parts=parts, l1=l1, grad_norm=grad_norm)
        return new_state, report

    def train(self, state: Optional[TrainState] = None) -> TrainState:

        if state is None:
            state = self.initial_state()

        if state.iteration > self.cfg.iterations:
            raise ContractError(
                f"state is at iteration {state.iteration}, past the configured {self.cfg.iterations}"
            )

        train_log = setup_training_log(self.log_file) if self.log_file else None
        prefetcher = BatchPrefetcher(self.batch_for, state.iteration, self.cfg.iterations)

        self.running = True
        self.iteration = state.iteration
        self.logger.info(
            f"Training iterations {state.iteration}..{self.cfg.iterations} "
            f"(temperatures={list(self.cfg.drift.temperatures)}, lambda={self.cfg.drift.lam})"
        )

        try:
            if self.cfg.prefetch and self.cfg.iterations - state.iteration > 1:
                prefetcher.start()

            while state.iteration < self.cfg.iterations:
                batch = prefetcher.get(state.iteration)
                state, report = self.train_step(state, batch)

                self.history.append(report)
                self.last_report = report
                self.iteration = state.iteration

                last = state.iteration == self.cfg.iterations
                if report.iteration % self.cfg.log_every == 0 or last:
                    line = report.log_line()
                    self.logger.info(line)
                    if train_log is not None:
                        train_log.info(line)

        finally:
            prefetcher.stop()
            self.running = False
            if train_log is not None:
                close_logger(train_log)

        return state

    def checkpoint(self, state: TrainState) -> Checkpoint:

        return Checkpoint.from_state(state, self.cfg.to_dict())

    def get_status(self) -> Dict[str, Any]:

        report = self.last_report

        return {
            'running': self.running,
            'iteration': self.iteration,
            'iterations': self.cfg.iterations,
            'lr': lr_at(self.iteration, self.cfg),
            'last_loss': report.parts.total if report else None,
            'last_drift': dict(report.parts.drift) if report else {},
            'last_grad_norm': report.grad_norm if report else None
        }


def train(
    cfg: TrainConfig,
    dataset,
    log_file: Optional[str] = None,
    resume: Optional[Checkpoint] = None,
    model=None
) -> Checkpoint:

    trainer = Trainer(cfg, dataset, model=model, log_file=log_file)
    state = resume.to_state() if resume is not None else None
    return trainer.checkpoint(trainer.train(state))
