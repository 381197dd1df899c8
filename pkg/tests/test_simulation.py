import numpy as np
import pytest

from src.data.corruption import NoiseModel, PairedSample, corrupt, streak_field
from src.data.dataset import PairedDataset, make_batch, simulate_dataset
from src.data.phantom import Ellipse, PhantomSpec, from_hu, random_phantom_spec, render_phantom, shepp_logan_spec, to_hu
from src.data.prefetch import BatchPrefetcher
from src.utils.errors import ConfigError, ContractError


def _pool(count=3, size=16, seed=0):
    return simulate_dataset(count, size, NoiseModel(), seed)


def test_empty_phantom_is_zero():
    image = render_phantom(PhantomSpec(size=8))

    assert image.shape == (1, 8, 8)
    assert np.all(image == 0.0)


def test_full_frame_ellipse_fills_image():
    image = render_phantom(PhantomSpec(size=16, ellipses=[Ellipse((0.0, 0.0), (2.0, 2.0), 0.0, 0.5)]))

    assert np.all(image == 0.5)


def test_overlap_is_clamped():
    spec = PhantomSpec(size=16, ellipses=[
        Ellipse((0.0, 0.0), (0.8, 0.8), 0.0, 0.6),
        Ellipse((0.1, 0.0), (0.8, 0.8), 30.0, 0.6),
    ])

    image = render_phantom(spec)

    assert image[0, 8, 8] == 1.0
    assert image.max() == 1.0


def test_presets_stay_in_unit_range():
    rng = np.random.default_rng(0)

    for spec in (shepp_logan_spec(64), random_phantom_spec(64, rng)):
        image = render_phantom(spec)
        assert image.min() >= 0.0 and image.max() <= 1.0
        assert image.max() > 0.0


def test_hu_mapping_round_trip():
    assert to_hu(0.0) == -1000.0
    assert to_hu(0.5) == 0.0
    assert from_hu(1000.0) == 1.0


def test_invalid_phantom_spec():
    with pytest.raises(ConfigError):
        PhantomSpec(size=0)
    with pytest.raises(ConfigError):
        PhantomSpec(size=8, ellipses=[((0.0, 0.0), (0.0, 1.0), 0.0, 0.5)])


def test_zero_noise_leaves_image_untouched():
    clean = render_phantom(shepp_logan_spec(32))
    model = NoiseModel(gaussian_sigma=0.0, streak_sigma=0.0, ndct_sigma=0.0)

    pair = corrupt(clean, model, np.random.default_rng(1))

    assert np.array_equal(pair.x, clean)
    assert np.array_equal(pair.y, clean)
    assert np.all(pair.r == 0.0)


def test_residual_is_exact_difference():
    pair = corrupt(render_phantom(shepp_logan_spec(32)), NoiseModel(), np.random.default_rng(2))

    assert np.max(np.abs(pair.r - (pair.y - pair.x))) == 0.0


def test_white_component_std():
    model = NoiseModel(gaussian_sigma=0.05, streak_sigma=0.0, ndct_sigma=0.01)

    pair = corrupt(np.zeros((1, 512, 512)), model, np.random.default_rng(3))

    assert abs(pair.r.std() - 0.05) <= 0.05 * 0.05


def test_streaks_vary_across_columns_not_rows():
    model = NoiseModel(gaussian_sigma=0.01, streak_sigma=0.05, ndct_sigma=0.0)

    pair = corrupt(np.zeros((1, 128, 128)), model, np.random.default_rng(4))
    residual = pair.r[0]

    column_means = residual.mean(axis=0)
    row_means = residual.mean(axis=1)
    assert column_means.var() > 20 * row_means.var()


def test_streak_field_is_constant_down_columns_with_unit_variance():
    field = streak_field(64, 4096, np.random.default_rng(5), smoothing=2.0)

    assert np.all(field == field[0])
    assert abs(field[0].std() - 1.0) < 0.1


def test_default_noise_is_zero_mean():
    data = simulate_dataset(250, 64, NoiseModel(), seed=6)

    assert data.r.size >= 10 ** 6
    assert -0.01 <= data.r.mean() <= 0.01


def test_noise_model_validation():
    with pytest.raises(ConfigError):
        NoiseModel(gaussian_sigma=-0.1)
    with pytest.raises(ConfigError):
        NoiseModel(streak_sigma=float('nan'))


def test_simulation_is_order_independent():
    serial = simulate_dataset(5, 16, NoiseModel(), seed=7, threads=1)
    parallel = simulate_dataset(5, 16, NoiseModel(), seed=7, threads=4)
    test_split = simulate_dataset(5, 16, NoiseModel(), seed=7, split='test')

    assert serial.x.tobytes() == parallel.x.tobytes()
    assert serial.y.tobytes() == parallel.y.tobytes()
    assert serial.x.tobytes() != test_split.x.tobytes()


def test_dataset_residual_stats():
    data = _pool()

    stats = data.residual_stats()

    assert stats['count'] == 3
    assert data.image_shape == (1, 16, 16)
    assert stats['std'] > 0.0
    assert np.array_equal(data.sample(1).r, data.y[1] - data.x[1])


def test_batch_of_one_full_patch_is_the_sample():
    sample = PairedSample.from_pair(np.zeros((1, 8, 8)), np.ones((1, 8, 8)) * 0.5)

    batch = make_batch([sample], 1, 8, seed=0)

    assert np.array_equal(batch.x[0], sample.x)
    assert np.array_equal(batch.y[0], sample.y)
    assert np.array_equal(batch.r[0], sample.r)


def test_batch_alignment_and_reproducibility():
    data = _pool()

    first = make_batch(data, 4, 8, seed=3)
    second = make_batch(data, 4, 8, seed=3)

    assert first.y.shape == (4, 1, 8, 8)
    assert np.max(np.abs(first.r - (first.y - first.x))) == 0.0
    for name in ('x', 'y', 'r'):
        assert getattr(first, name).tobytes() == getattr(second, name).tobytes()


def test_batch_contract_errors():
    data = _pool()

    with pytest.raises(ContractError):
        make_batch(data, 2, 32, seed=0)
    with pytest.raises(ContractError):
        make_batch([], 2, 8, seed=0)
    with pytest.raises(ContractError):
        PairedDataset.from_samples([])


def test_prefetcher_hands_out_batches_in_order():
    data = _pool()

    def produce(iteration):
        return make_batch(data, 2, 8, seed=iteration)

    with BatchPrefetcher(produce, 0, 5) as prefetcher:
        batches = [prefetcher.get(i) for i in range(5)]

    for iteration, batch in enumerate(batches):
        assert batch.y.tobytes() == produce(iteration).y.tobytes()


def test_prefetcher_forwards_producer_errors():
    def produce(iteration):
        raise ContractError(f"bad batch {iteration}")

    prefetcher = BatchPrefetcher(produce, 0, 3)
    prefetcher.start()
    try:
        with pytest.raises(ContractError):
            prefetcher.get(0)
    finally:
        prefetcher.stop()
