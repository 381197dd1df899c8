import math
import re
from unittest.mock import Mock

import numpy as np
import pytest

from src.autograd.tensor import Tensor
from src.data.corruption import NoiseModel, PairedSample
from src.data.dataset import simulate_dataset
from src.drift.field import ResidualBatch, drift_field
from src.drift.losses import DriftConfig, compute_objective
from src.model.unet import GeneratorConfig
from src.training.ema import ExponentialMovingAverage, warmup_decay
from src.training.optimizer import AdamW, clip_grad_norm, global_norm
from src.training.presets import PRESETS, resolve_variant
from src.training.schedule import lr_at
from src.training.state import Checkpoint, TrainState, load_checkpoint, quantize, save_checkpoint
from src.storage import formats
from src.training.trainer import TrainConfig, Trainer, train
from src.utils.errors import ConfigError, FormatError, NumericError


class LinearGenerator:
    """r_hat = w * y + v * eps + b with scalar parameters."""

    def init_params(self):
        return {'w': np.array(0.5), 'v': np.array(0.25), 'b': np.array(-0.125)}

    def forward(self, eps, y, params):
        return y * params['w'] + eps * params['v'] + params['b']


def _tiny_pool():
    rng = np.random.default_rng(0)
    return [
        PairedSample.from_pair(rng.standard_normal((1, 2, 2)), rng.standard_normal((1, 2, 2)))
        for _ in range(3)
    ]


def _small_config(**overrides):
    settings = dict(
        iterations=4,
        batch_size=2,
        patch_size=8,
        decay_step=2,
        log_every=1,
        drift=DriftConfig(temperatures=(1.0, 1.5), lam=0.01),
        generator=GeneratorConfig(base_channels=4, depth=1, seed=3),
        seed=11
    )
    settings.update(overrides)
    return TrainConfig(**settings)


@pytest.fixture(scope="module")
def small_dataset():
    return simulate_dataset(4, 8, NoiseModel(), seed=5)


def test_lr_schedule():
    desk = TrainConfig()
    full = TrainConfig.full_scale()

    assert lr_at(0, desk) == 1e-4
    assert lr_at(10000, full) == pytest.approx(5e-5, rel=1e-15)
    assert lr_at(25000, full) == pytest.approx(2.5e-5, rel=1e-15)
    assert lr_at(399, desk) == 1e-4
    assert lr_at(400, desk) == pytest.approx(5e-5, rel=1e-15)


def test_clip_never_exceeds_max_norm():
    rng = np.random.default_rng(1)

    for scale in (1e-3, 0.5, 3.0, 1e4):
        grads = {'a': rng.standard_normal((3, 3)) * scale, 'b': rng.standard_normal(5) * scale}
        clipped, total = clip_grad_norm(grads, 1.0)

        assert total == pytest.approx(global_norm(grads))
        assert global_norm(clipped) <= 1.0 + 1e-9
        if total < 1.0:
            assert all(np.array_equal(clipped[k], grads[k]) for k in grads)


def test_one_step_matches_scalar_reference():
    model = LinearGenerator()
    rng = np.random.default_rng(2)
    y = rng.standard_normal((2, 1, 2, 2))
    eps = rng.standard_normal((2, 1, 2, 2))
    r = rng.standard_normal((2, 1, 2, 2))
    cfg = DriftConfig(temperatures=(1.0,), lam=0.0)
    lr, max_norm = 1e-3, 0.1

    start = model.init_params()
    params = {name: Tensor(value, requires_grad=True) for name, value in start.items()}
    generated = ResidualBatch.generated(model.forward(Tensor(eps), Tensor(y), params))
    real = ResidualBatch.real(r)
    field = drift_field(generated, real, 1.0).drift.data
    loss, _ = compute_objective(generated, real, cfg)
    loss.backward()

    grads, _ = clip_grad_norm({name: p.grad for name, p in params.items()}, max_norm)
    optimizer = AdamW()
    first, second = optimizer.init_moments(start)
    updated, _, _ = optimizer.step(start, grads, first, second, step=1, lr=lr)

    g_out = -2.0 * field / 2
    raw = {'w': float(np.sum(g_out * y)), 'v': float(np.sum(g_out * eps)), 'b': float(np.sum(g_out))}
    norm = math.sqrt(sum(g * g for g in raw.values()))
    coef = min(1.0, max_norm / (norm + 1e-6))

    for name, g in raw.items():
        g = g * coef
        m_hat = (0.1 * g) / 0.1
        v_hat = (0.001 * g * g) / 0.001
        expected = float(start[name]) - lr * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert abs(float(updated[name]) - expected) <= 1e-12


def test_train_step_applies_clipped_adamw_and_ema():
    pool = _tiny_pool()
    cfg = TrainConfig(iterations=1, batch_size=2, patch_size=2, lr=1e-2, ema_decay=0.9,
                      drift=DriftConfig(temperatures=(1.0,), lam=0.0), seed=4)
    trainer = Trainer(cfg, pool, model=LinearGenerator())
    state = trainer.initial_state()
    batch = trainer.batch_for(0)

    new_state, report = trainer.train_step(state, batch)

    params = {name: Tensor(v, requires_grad=True) for name, v in state.params.items()}
    out = trainer.model.forward(Tensor(trainer.noise_for(0, batch.y.shape)), Tensor(batch.y), params)
    loss, _ = compute_objective(ResidualBatch.generated(out), ResidualBatch.real(batch.r), cfg.drift)
    loss.backward()
    grads, norm = clip_grad_norm({n: p.grad for n, p in params.items()}, cfg.clip_norm)
    expected, _, _ = AdamW().step(state.params, grads, state.adam_m, state.adam_v, step=1, lr=1e-2)
    expected = quantize(expected)

    assert new_state.iteration == 1
    assert report.grad_norm == norm
    for name in expected:
        assert new_state.params[name] == expected[name]
        decay = warmup_decay(0.9, 0)
        assert new_state.ema[name] == quantize({'p': decay * state.ema[name] + (1.0 - decay) * expected[name]})['p']


def test_ema_decays_by_factor_per_step():
    params = {'p': np.array([1.0, -2.0, 3.0])}
    ema = ExponentialMovingAverage(0.9)
    ema.load({'p': np.zeros(3)})
    distance = np.linalg.norm(ema.shadow['p'] - params['p'])

    for _ in range(20):
        ema.update(params)
        new_distance = np.linalg.norm(ema.shadow['p'] - params['p'])
        assert new_distance == pytest.approx(0.9 * distance, rel=1e-9)
        distance = new_distance

    assert set(ema.state_dict()) == {'p'}
    np.testing.assert_array_equal(ema.state_dict()['p'], ema.shadow['p'])


def test_ema_warmup_ramps_to_configured_decay():
    assert warmup_decay(0.999, 0) == pytest.approx(0.1)
    assert warmup_decay(0.999, 90) == pytest.approx(0.91)
    assert warmup_decay(0.999, 10 ** 5) == 0.999
    assert warmup_decay(0.5, 20) == 0.5

    params = {'p': np.array([4.0])}
    ema = ExponentialMovingAverage(0.999)
    ema.load({'p': np.zeros(1)})
    ema.update(params, step=0)

    assert ema.shadow['p'][0] == pytest.approx(0.9 * 4.0)


def test_ema_rejects_bad_decay():
    with pytest.raises(ConfigError):
        ExponentialMovingAverage(1.0)


def test_adamw_decreases_quadratic_monotonically():
    target = np.array([1.0, -3.0, 2.0])
    params = {'p': np.array([4.0, 1.0, -2.0])}
    optimizer = AdamW()
    first, second = optimizer.init_moments(params)

    def loss(p):
        return 0.5 * float(np.sum((p - target) ** 2))

    previous = loss(params['p'])
    for step in range(1, 101):
        grads = {'p': params['p'] - target}
        params, first, second = optimizer.step(params, grads, first, second, step=step, lr=1e-2)
        current = loss(params['p'])
        assert current < previous
        previous = current


def test_weight_decay_is_decoupled():
    optimizer = AdamW(weight_decay=0.1)
    params = {'p': np.array([2.0])}
    first, second = optimizer.init_moments(params)

    updated, _, _ = optimizer.step(params, {'p': np.array([0.0])}, first, second, step=1, lr=0.5)

    assert updated['p'][0] == pytest.approx(2.0 * (1 - 0.05))


def test_zero_lr_keeps_params_and_moves_ema(small_dataset):
    cfg = _small_config(lr=0.0, ema_decay=0.5, prefetch=False)
    trainer = Trainer(cfg, small_dataset)
    state = trainer.initial_state()
    start = {name: value.copy() for name, value in state.params.items()}
    state.ema = {name: np.zeros_like(value) for name, value in state.params.items()}

    gaps = []
    for _ in range(3):
        state, _ = trainer.train_step(state, trainer.batch_for(state.iteration))
        gaps.append(sum(float(np.sum(np.abs(state.ema[n] - state.params[n]))) for n in state.params))

    assert all(np.array_equal(state.params[n], start[n]) for n in start)
    assert gaps[0] > gaps[1] > gaps[2]


def test_zero_iterations_returns_initialization(small_dataset):
    cfg = _small_config(iterations=0)
    trainer = Trainer(cfg, small_dataset)

    checkpoint = train(cfg, small_dataset)

    assert checkpoint == trainer.checkpoint(trainer.initial_state())
    assert checkpoint.iteration == 0
    assert all(np.array_equal(checkpoint.weights(True)[n], checkpoint.weights(False)[n]) for n in checkpoint.weights())


def test_training_is_deterministic_with_or_without_prefetch(small_dataset):
    first = Trainer(_small_config(prefetch=True), small_dataset)
    second = Trainer(_small_config(prefetch=False), small_dataset)

    a = first.checkpoint(first.train())
    b = second.checkpoint(second.train())

    assert a.iteration == b.iteration
    names = [name for name in a.tensors if formats.is_state_tensor(name)]
    assert names == [name for name in b.tensors if formats.is_state_tensor(name)]
    assert all(np.array_equal(a.tensors[name], b.tensors[name]) for name in names)
    assert a.config['prefetch'] != b.config['prefetch']
    assert [r.log_line() for r in first.history] == [r.log_line() for r in second.history]


def test_loss_parts_sum_to_total(small_dataset):
    cfg = _small_config(iterations=3)
    trainer = Trainer(cfg, small_dataset)
    trainer.train()

    for report in trainer.history:
        assert abs(report.parts.weighted_sum(cfg.drift.lam) - report.parts.total) <= 1e-12


def test_split_run_resume_is_bit_exact(small_dataset, tmp_path):
    full_cfg = _small_config(iterations=6)
    uninterrupted = Trainer(full_cfg, small_dataset)
    expected = uninterrupted.checkpoint(uninterrupted.train())

    first_half = Trainer(_small_config(iterations=3), small_dataset)
    path = str(tmp_path / "mid.ckpt")
    save_checkpoint(first_half.checkpoint(first_half.train()), path)

    resumed = Trainer(full_cfg, small_dataset)
    final = resumed.checkpoint(resumed.train(load_checkpoint(path).to_state()))

    assert final == expected
    assert final.iteration == 6


def test_checkpoint_round_trip_and_save_idempotence(small_dataset, tmp_path):
    cfg = _small_config(iterations=2)
    checkpoint = train(cfg, small_dataset)
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"

    save_checkpoint(checkpoint, str(first))
    loaded = load_checkpoint(str(first))
    save_checkpoint(loaded, str(second))

    assert loaded == checkpoint
    assert first.read_bytes() == second.read_bytes()
    assert loaded.config['generator']['base_channels'] == 4
    assert loaded.config['drift']['lambda'] == 0.01


def test_checkpoint_with_mismatched_groups_rejected():
    state = TrainState(
        params={'a': np.zeros(2)},
        ema={'a': np.zeros(3)},
        adam_m={'a': np.zeros(2)},
        adam_v={'a': np.zeros(2)},
        iteration=1
    )

    with pytest.raises(FormatError):
        Checkpoint.from_state(state).to_state()


def test_checkpoint_with_unknown_tensor_rejected():
    state = TrainState(
        params={'a': np.zeros(2)},
        ema={'a': np.zeros(2)},
        adam_m={'a': np.zeros(2)},
        adam_v={'a': np.zeros(2)},
        iteration=1
    )
    checkpoint = Checkpoint.from_state(state)
    checkpoint.tensors['grad/a'] = np.zeros(2)

    with pytest.raises(FormatError, match="grad/a"):
        checkpoint.to_state()


def test_training_log_lines(small_dataset, tmp_path):
    log_file = tmp_path / "train.log"
    trainer = Trainer(_small_config(iterations=2), small_dataset, log_file=str(log_file))
    trainer.train()

    lines = log_file.read_text(encoding='utf-8').splitlines()

    assert len(lines) == 2
    pattern = r"^iter=\d+ lr=\S+ loss=\S+ drift\[τ=1\]=\S+ drift\[τ=1\.5\]=\S+ l1=\S+$"
    assert all(re.match(pattern, line) for line in lines)


def test_non_finite_loss_aborts():
    sample = PairedSample.from_pair(np.zeros((1, 8, 8)), np.full((1, 8, 8), np.nan))
    cfg = _small_config(iterations=1, prefetch=False)
    trainer = Trainer(cfg, [sample])

    with pytest.raises(NumericError) as excinfo:
        trainer.train()

    assert excinfo.value.diagnostic['iteration'] == 0
    assert excinfo.value.diagnostic['temperatures'] == [1.0, 1.5]


def test_status_reports_progress(small_dataset):
    trainer = Trainer(_small_config(iterations=2), small_dataset)
    assert trainer.get_status()['last_loss'] is None

    trainer.train()
    status = trainer.get_status()

    assert status['iteration'] == 2
    assert status['running'] is False
    assert set(status['last_drift']) == {1.0, 1.5}


def test_custom_model_is_used(small_dataset):
    model = Mock()
    model.init_params.return_value = {'b': np.array(0.0)}
    model.forward.side_effect = lambda eps, y, params: y * 0.0 + params['b']

    trainer = Trainer(_small_config(iterations=1, prefetch=False), small_dataset, model=model)
    state = trainer.train()

    assert model.forward.call_count == 1
    assert set(state.params) == {'b'}


def test_presets():
    assert resolve_variant('fine').temperatures == (1.0, 1.5) and PRESETS['fine'].lam == 0.0
    assert resolve_variant('balanced').temperatures == (0.2, 1.0)
    smooth = resolve_variant('smooth').drift_config()
    assert smooth.temperatures == (1.0,) and smooth.lam == 0.01

    l1 = resolve_variant('l1').drift_config()
    assert l1.temperatures == () and l1.lam == 0.01

    with pytest.raises(ConfigError, match="fine, balanced, smooth, l1"):
        resolve_variant('sharp')


@pytest.mark.parametrize("settings", [
    {'decay_factor': 0.0},
    {'decay_factor': 1.5},
    {'ema_decay': 1.0},
    {'clip_norm': 0.0},
    {'iterations': -1},
    {'batch_size': 0},
])
def test_train_config_validation(settings):
    with pytest.raises(ConfigError):
        TrainConfig(**settings)
