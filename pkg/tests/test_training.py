import json
import math
import struct

import numpy as np
import pandas as pd
import pytest

from src.learning.labels import make_label
from src.learning.lightnet import build_arch, init_network
from src.models.errors import CheckpointError, ConfigurationError, TrainingError
from src.models.index import (
    DatasetGenConfig,
    LabelMode,
    Method,
    NetworkVariant,
    StopReason,
    SystemConfig,
    TrainConfig,
)
from src.phy.channel import ObservationParams, exponential_pdp, propagate, sample_channel
from src.phy.frame import assemble_frame, generate_training_symbol
from src.pipeline.training.index import (
    generate_dataset,
    method_for,
    network_input,
    raw_signal_feature,
    train,
)
from src.pipeline.training.utils import (
    CHECKPOINT_MAGIC,
    META_COLUMNS,
    Dataset,
    ModelCheckpoint,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from src.utils.index import config_digest, derive_rng


@pytest.fixture
def toy_dataset_config():
    return DatasetGenConfig(n_samples=40, master_seed=3, snr_range_db=(5.0, 25.0))


@pytest.fixture
def toy_dataset(toy_config, toy_dataset_config):
    return generate_dataset(toy_dataset_config, toy_config)


def _checkpoint(config, variant=NetworkVariant.PROP, seed=0):
    return ModelCheckpoint(
        params=init_network(build_arch(variant, config), seed),
        method=Method.PROP,
        config_digest=config_digest(config),
        generator_digest="abc",
    )


def test_split_sizes_follow_validation_fraction(toy_config):
    dataset = Dataset(
        inputs=np.zeros((50_000, 1), dtype=np.float32),
        labels=np.zeros((50_000, 1), dtype=np.uint8),
        meta=pd.DataFrame(columns=META_COLUMNS),
        config=DatasetGenConfig(n_samples=50_000, val_fraction=0.25),
        system=toy_config,
    )
    assert (dataset.n_train, dataset.n_validation) == (37_500, 12_500)
    assert dataset.train_split()[0].shape[0] == 37_500
    assert dataset.validation_split()[0].shape[0] == 12_500


def test_generated_dataset_shapes(toy_config, toy_dataset):
    assert toy_dataset.inputs.shape == (40, toy_config.N_s)
    assert toy_dataset.inputs.dtype == np.float32
    assert toy_dataset.labels.shape == (40, toy_config.N_s)
    assert toy_dataset.labels.dtype == np.uint8
    assert list(toy_dataset.meta.columns) == META_COLUMNS
    assert (toy_dataset.n_train, toy_dataset.n_validation) == (30, 10)
    np.testing.assert_allclose(toy_dataset.inputs.max(axis=1), 1.0)


def test_training_labels_match_the_true_channel(toy_config, toy_dataset):
    meta = toy_dataset.meta
    assert (meta["tau_true"] == meta["tau_hat"]).all()
    assert set(meta["tau_hat"]) <= {2, 3}
    assert meta["snr_db"].between(5.0, 25.0).all()
    assert meta["eta"].between(0.01, 0.2).all()
    assert meta["theta"].between(0, toy_config.N - 1).all()
    for row, gamma in zip(meta.itertuples(), toy_dataset.labels):
        expected = make_label(row.theta, row.tau_hat, toy_config).gamma
        assert np.array_equal(gamma, expected)


def test_sample_rebuilds_from_its_own_stream(toy_config, toy_dataset, toy_dataset_config):
    """Sample i depends only on (master_seed, i)."""
    row = toy_dataset.meta.iloc[7]
    rng = derive_rng(toy_dataset_config.master_seed, 7)
    tau_hat = int(rng.integers(toy_config.N_g // 2, toy_config.N_g))
    eta_u = rng.uniform()
    theta = int(rng.integers(0, toy_config.N))
    snr_u = rng.uniform()
    assert tau_hat == row.tau_hat and theta == row.theta
    assert row.eta == pytest.approx(0.01 + 0.19 * eta_u)
    assert row.snr_db == pytest.approx(5.0 + 20.0 * snr_u)

    symbol = generate_training_symbol(toy_config)
    frame = assemble_frame(symbol, theta, toy_config, rng)
    channel = sample_channel(exponential_pdp(tau_hat + 1, row.eta, toy_config.N_g), rng)
    obs = propagate(frame, channel, ObservationParams.from_snr(theta, row.snr_db, 1.0), rng)
    np.testing.assert_array_equal(
        network_input(obs, symbol, NetworkVariant.PROP), toy_dataset.inputs[7]
    )


def test_dataset_is_independent_of_worker_count(toy_config, toy_dataset_config):
    single = generate_dataset(toy_dataset_config, toy_config, workers=1)
    threaded = generate_dataset(toy_dataset_config, toy_config, workers=4)
    assert single.inputs.tobytes() == threaded.inputs.tobytes()
    assert single.labels.tobytes() == threaded.labels.tobytes()
    pd.testing.assert_frame_equal(single.meta, threaded.meta)


def test_fixed_tau_hat_dataset(toy_config):
    config = DatasetGenConfig(
        n_samples=12, master_seed=1, label_mode=LabelMode.FIXED_TAU_HAT, fixed_tau_hat=1
    )
    dataset = generate_dataset(config, toy_config)
    assert (dataset.meta["tau_hat"] == 1).all()
    assert (dataset.labels.sum(axis=1) == toy_config.N_g - 1).all()


def test_fixed_tau_hat_must_fit_the_cp(toy_config):
    config = DatasetGenConfig(
        n_samples=12, master_seed=1, label_mode=LabelMode.FIXED_TAU_HAT, fixed_tau_hat=4
    )
    with pytest.raises(ConfigurationError) as excinfo:
        generate_dataset(config, toy_config)
    assert excinfo.value.key_path == "dataset.fixed_tau_hat"


def test_empty_split_is_rejected(toy_config):
    with pytest.raises(ConfigurationError):
        generate_dataset(DatasetGenConfig(n_samples=1, master_seed=0), toy_config)


def test_raw_signal_dataset_uses_the_whole_window(toy_config):
    config = DatasetGenConfig(
        n_samples=8, master_seed=2, variant=NetworkVariant.RAW_SIGNAL_PROP
    )
    dataset = generate_dataset(config, toy_config)
    assert dataset.inputs.shape == (8, toy_config.N_w)
    np.testing.assert_allclose(dataset.inputs.max(axis=1), 1.0)


def test_raw_signal_feature_is_peak_normalized_power(toy_config):
    symbol = generate_training_symbol(toy_config)
    rng = np.random.default_rng(0)
    frame = assemble_frame(symbol, 3, toy_config, rng)
    channel = sample_channel(exponential_pdp(1, 0.0), rng, deterministic=True)
    obs = propagate(frame, channel, ObservationParams.from_snr(3, math.inf, 1.0), rng)
    power = np.abs(obs.y) ** 2
    np.testing.assert_allclose(raw_signal_feature(obs), power / power.max())


@pytest.mark.parametrize(
    "variant, mode, tau, expected",
    [
        (NetworkVariant.PROP, LabelMode.RANDOM_TAU_HAT, None, Method.PROP),
        (NetworkVariant.PROP, LabelMode.FIXED_TAU_HAT, 2, Method.PROP_FIXED_TAU),
        (NetworkVariant.RAW_SIGNAL_PROP, LabelMode.RANDOM_TAU_HAT, None, Method.PROP_RAW_SIGNAL),
        (NetworkVariant.DNN_BASELINE, LabelMode.RANDOM_TAU_HAT, None, Method.DNN),
    ],
)
def test_method_for(variant, mode, tau, expected):
    config = DatasetGenConfig(variant=variant, label_mode=mode, fixed_tau_hat=tau)
    assert method_for(config) == expected


def test_toy_network_learns_noiseless_single_path(toy_config):
    config = DatasetGenConfig(
        n_samples=500,
        master_seed=11,
        snr_range_db=(math.inf, math.inf),
        label_mode=LabelMode.FIXED_TAU_HAT,
        fixed_tau_hat=0,
    )
    dataset = generate_dataset(config, toy_config)
    arch = build_arch(NetworkVariant.PROP, toy_config)
    _, report = train(
        dataset,
        TrainConfig(alpha=0.5, batch_size=8, max_epochs=300, patience=300, seed=5),
        arch,
    )
    assert report.history[0].epoch == 0
    assert report.history[-1].train_mse < 0.1 * report.history[0].train_mse


def test_zero_learning_rate_keeps_parameters(toy_config, toy_dataset):
    arch = build_arch(NetworkVariant.PROP, toy_dataset.system)
    params, report = train(
        toy_dataset, TrainConfig(alpha=0.0, batch_size=4, max_epochs=10, patience=3, seed=9), arch
    )
    initial = init_network(arch, 9)
    for name, tensor in params.tensors.items():
        assert np.array_equal(tensor, initial.tensors[name])
    assert len({record.train_mse for record in report.history}) == 1
    assert len({record.val_mse for record in report.history}) == 1
    assert report.stop_reason == StopReason.EARLY_STOP
    assert len(report.history) == 4  # epoch 0 plus `patience` epochs


def test_training_is_reproducible(toy_dataset):
    arch = build_arch(NetworkVariant.PROP, toy_dataset.system)
    config = TrainConfig(alpha=0.3, batch_size=4, max_epochs=5, patience=5, seed=2)
    first_params, first = train(toy_dataset, config, arch)
    second_params, second = train(toy_dataset, config, arch)
    assert first.to_dict(include_wall_time=False) == second.to_dict(include_wall_time=False)
    for name in first_params.tensors:
        assert np.array_equal(first_params.tensors[name], second_params.tensors[name])


def test_training_stops_at_max_steps(toy_dataset):
    arch = build_arch(NetworkVariant.DNN_BASELINE, toy_dataset.system)
    _, report = train(
        toy_dataset, TrainConfig(alpha=0.1, batch_size=4, max_steps=3, seed=1), arch
    )
    assert report.steps == 3
    assert report.stop_reason == StopReason.MAX_STEPS
    assert len(report.history) == 2


def test_training_stops_at_max_epochs(toy_dataset):
    arch = build_arch(NetworkVariant.PROP, toy_dataset.system)
    _, report = train(
        toy_dataset, TrainConfig(alpha=0.1, batch_size=30, max_epochs=2, patience=10, seed=1), arch
    )
    assert report.stop_reason == StopReason.MAX_EPOCHS
    assert report.steps == 2  # one full batch of 30 training rows per epoch


def test_best_model_has_minimum_validation_mse(toy_dataset):
    arch = build_arch(NetworkVariant.PROP, toy_dataset.system)
    _, report = train(
        toy_dataset, TrainConfig(alpha=0.5, batch_size=4, max_epochs=8, patience=8, seed=4), arch
    )
    val_losses = [record.val_mse for record in report.history]
    assert report.best_val_mse == min(val_losses)
    assert report.history[report.best_epoch].val_mse == report.best_val_mse
    assert all(math.isfinite(loss) for loss in val_losses)


def test_divergence_aborts_with_report(toy_dataset):
    toy_dataset.inputs[0, 0] = np.nan
    arch = build_arch(NetworkVariant.PROP, toy_dataset.system)
    with pytest.raises(TrainingError) as excinfo:
        train(toy_dataset, TrainConfig(alpha=0.1, batch_size=4, seed=1), arch)
    assert excinfo.value.report is not None


def test_arch_must_fit_dataset(toy_dataset):
    arch = build_arch(NetworkVariant.RAW_SIGNAL_PROP, toy_dataset.system)
    with pytest.raises(ConfigurationError):
        train(toy_dataset, TrainConfig(seed=1), arch)


def test_dataset_round_trip(tmp_path, toy_dataset):
    save_dataset(toy_dataset, tmp_path / "dataset")
    loaded = load_dataset(tmp_path / "dataset")
    assert loaded.inputs.tobytes() == toy_dataset.inputs.tobytes()
    assert np.array_equal(loaded.labels, toy_dataset.labels)
    pd.testing.assert_frame_equal(loaded.meta, toy_dataset.meta, check_dtype=False)
    assert loaded.config == toy_dataset.config
    assert loaded.system == toy_dataset.system


def test_corrupted_dataset_is_rejected(tmp_path, toy_dataset):
    directory = save_dataset(toy_dataset, tmp_path / "dataset")
    payload = bytearray((directory / "inputs.f32").read_bytes())
    payload[0] ^= 0xFF
    (directory / "inputs.f32").write_bytes(bytes(payload))
    with pytest.raises(CheckpointError):
        load_dataset(directory)
    with pytest.raises(CheckpointError):
        load_dataset(tmp_path / "missing")


@pytest.mark.parametrize("variant", list(NetworkVariant))
def test_checkpoint_round_trip_is_exact(tmp_path, toy_config, variant):
    ckpt = _checkpoint(toy_config, variant, seed=3)
    loaded = load_checkpoint(save_checkpoint(ckpt, tmp_path / "model.ckpt"))
    assert loaded.arch == ckpt.arch
    assert loaded.method == ckpt.method
    assert loaded.config_digest == ckpt.config_digest
    assert loaded.generator_digest == "abc"
    for name, tensor in ckpt.params.tensors.items():
        assert loaded.params.tensors[name].tobytes() == tensor.tobytes()


def test_truncated_checkpoint_is_rejected(tmp_path, toy_config):
    path = save_checkpoint(_checkpoint(toy_config), tmp_path / "model.ckpt")
    blob = path.read_bytes()
    for cut in (4, 20, len(blob) - 8):
        path.write_bytes(blob[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_checkpoint_version_mismatch_is_rejected(tmp_path, toy_config):
    path = save_checkpoint(_checkpoint(toy_config), tmp_path / "model.ckpt")
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", 2)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="format 2"):
        load_checkpoint(path)


def test_checkpoint_payload_corruption_is_rejected(tmp_path, toy_config):
    path = save_checkpoint(_checkpoint(toy_config), tmp_path / "model.ckpt")
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="digest"):
        load_checkpoint(path)


def test_checkpoint_for_another_system_is_refused(tmp_path, toy_config):
    path = save_checkpoint(_checkpoint(toy_config), tmp_path / "model.ckpt")
    other = SystemConfig(N=32, N_g=4)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_digest=config_digest(other))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")


def _rewrite_header(path, mutate):
    blob = path.read_bytes()
    prefix_len = len(CHECKPOINT_MAGIC) + 8
    version, header_len = struct.unpack("<II", blob[len(CHECKPOINT_MAGIC) : prefix_len])
    header = json.loads(blob[prefix_len : prefix_len + header_len])
    mutate(header)
    header_bytes = json.dumps(header).encode("utf-8")
    path.write_bytes(
        CHECKPOINT_MAGIC
        + struct.pack("<II", version, len(header_bytes))
        + header_bytes
        + blob[prefix_len + header_len :]
    )


@pytest.mark.parametrize(
    "mutate",
    [
        lambda header: header.update(arch={"variant": "Nope"}),
        lambda header: header.pop("method"),
        lambda header: header.update(method="Bogus"),
        lambda header: header.update(tensors="none"),
        lambda header: header["tensors"][0].update(name="renamed"),
        lambda header: header["tensors"][-1].update(offset=10**6),
    ],
)
def test_malformed_checkpoint_header_is_a_checkpoint_error(tmp_path, toy_config, mutate):
    path = save_checkpoint(_checkpoint(toy_config), tmp_path / "model.ckpt")
    _rewrite_header(path, mutate)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
