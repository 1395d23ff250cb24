import math
import time
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from src.config.logging import get_logger, set_stage
from src.learning.labels import make_label, sample_tau_hat
from src.learning.lightnet import (
    NetworkArch,
    NetworkParams,
    backward,
    forward,
    init_network,
    mse_loss,
    sgd_step,
)
from src.models.errors import ConfigurationError, TrainingError
from src.models.index import (
    DatasetGenConfig,
    LabelMode,
    Method,
    NetworkVariant,
    StopReason,
    SystemConfig,
    TrainConfig,
)
from src.phy.channel import (
    Observation,
    ObservationParams,
    exponential_pdp,
    propagate,
    sample_channel,
)
from src.phy.frame import TrainingSymbol, assemble_frame, generate_training_symbol
from src.phy.metric import compute_metric
from src.pipeline.training.utils import META_COLUMNS, Dataset, EpochRecord, TrainReport
from src.services.workers import ordered_map
from src.utils.index import derive_rng

logger = get_logger(__name__)

MSE_CHUNK = 2048


def raw_signal_feature(obs: Observation) -> np.ndarray:
    """|y|^2 scaled to a unit peak, the input of the raw-signal variant."""
    power = np.abs(obs.y) ** 2
    peak = power.max()
    return power / peak if peak > 0 else power


def network_input(
    obs: Observation, symbol: TrainingSymbol, variant: NetworkVariant
) -> np.ndarray:
    if variant == NetworkVariant.RAW_SIGNAL_PROP:
        feature = raw_signal_feature(obs)
    else:
        feature = compute_metric(obs, symbol, normalize=True).m
    return feature.astype(np.float32)


def method_for(config: DatasetGenConfig) -> Method:
    if config.variant == NetworkVariant.DNN_BASELINE:
        return Method.DNN
    if config.variant == NetworkVariant.RAW_SIGNAL_PROP:
        return Method.PROP_RAW_SIGNAL
    if config.label_mode == LabelMode.FIXED_TAU_HAT:
        return Method.PROP_FIXED_TAU
    return Method.PROP


def draw_uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    # one draw per call keeps the stream aligned for degenerate ranges
    u = rng.uniform()
    low, high = bounds
    return float(low) if low == high else float(low + (high - low) * u)


def _resolve_theta_range(config: DatasetGenConfig, system: SystemConfig) -> Tuple[int, int]:
    low, high = config.theta_range or (0, system.N - 1)
    if low < 0 or high > system.N - 1:
        raise ConfigurationError(
            f"theta_range must lie within [0, {system.N - 1}], got {(low, high)}",
            key_path="dataset.theta_range",
        )
    return int(low), int(high)


def _validate_generation(config: DatasetGenConfig, system: SystemConfig) -> None:
    if config.master_seed is None:
        raise ConfigurationError("dataset generation needs a master_seed", "dataset.master_seed")
    if config.label_mode == LabelMode.FIXED_TAU_HAT and config.fixed_tau_hat >= system.N_g:
        raise ConfigurationError(
            f"fixed_tau_hat must be < N_g={system.N_g}, got {config.fixed_tau_hat}",
            key_path="dataset.fixed_tau_hat",
        )
    n_val = int(math.floor(config.n_samples * config.val_fraction + 0.5))
    if n_val < 1 or n_val >= config.n_samples:
        raise ConfigurationError(
            f"val_fraction {config.val_fraction} leaves an empty split of {config.n_samples}",
            key_path="dataset.val_fraction",
        )


def generate_dataset(
    config: DatasetGenConfig, system: SystemConfig, workers: Optional[int] = None
) -> Dataset:
    """
    * Every sample i draws from its own stream derive_rng(master_seed, i):
    *   - tau_hat (random or fixed), eta, theta and the SNR
    *   - an exponential channel with tau_hat + 1 paths, inside the cyclic prefix
    *   - the frame filler, the channel taps and the receiver noise
    * The network input is the normalized timing metric (or |y|^2 for the raw-signal
      variant) and the target is the label vector for (theta, tau_hat).
    """
    _validate_generation(config, system)
    theta_low, theta_high = _resolve_theta_range(config, system)
    symbol = generate_training_symbol(system, config.seq_id)

    def build_sample(index: int):
        rng = derive_rng(config.master_seed, index)
        if config.label_mode == LabelMode.FIXED_TAU_HAT:
            tau_hat = int(config.fixed_tau_hat)
        else:
            tau_hat = sample_tau_hat(system, rng)
        eta = draw_uniform(rng, config.eta_range)
        theta = int(rng.integers(theta_low, theta_high + 1))
        snr_db = draw_uniform(rng, config.snr_range_db)

        profile = exponential_pdp(tau_hat + 1, eta, max_delay=system.N_g)
        frame = assemble_frame(symbol, theta, system, rng)
        channel = sample_channel(profile, rng)
        params = ObservationParams.from_snr(theta, snr_db, system.P_t, config.epsilon)
        obs = propagate(frame, channel, params, rng)

        feature = network_input(obs, symbol, config.variant)
        label = make_label(theta, tau_hat, system)
        meta = (index, theta, profile.max_delay, tau_hat, eta, snr_db)
        return feature, label.gamma, meta

    set_stage("dataset_generation")
    try:
        logger.info(
            "dataset_generation_started",
            n_samples=config.n_samples,
            variant=config.variant.value,
            label_mode=config.label_mode.value,
        )
        start = time.perf_counter()
        samples = ordered_map(build_sample, range(config.n_samples), workers)

        dataset = Dataset(
            inputs=np.stack([feature for feature, _, _ in samples]),
            labels=np.stack([gamma for _, gamma, _ in samples]),
            meta=pd.DataFrame([meta for _, _, meta in samples], columns=META_COLUMNS),
            config=config,
            system=system,
        )
        logger.info(
            "dataset_generation_completed",
            n_samples=dataset.n_samples,
            n_train=dataset.n_train,
            n_validation=dataset.n_validation,
            elapsed_s=round(time.perf_counter() - start, 3),
        )
        return dataset
    except Exception as e:
        logger.error("dataset_generation_failed", error=str(e), exc_info=True)
        raise
    finally:
        set_stage(None)


def evaluate_mse(params: NetworkParams, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared error over samples and output positions, in fixed row order."""
    if len(inputs) == 0:
        return math.nan
    total = 0.0
    for start in range(0, len(inputs), MSE_CHUNK):
        output, _ = forward(params, inputs[start : start + MSE_CHUNK])
        total += mse_loss(output, labels[start : start + MSE_CHUNK])
    return total / (labels.shape[0] * labels.shape[1])


def train(
    dataset: Dataset, config: TrainConfig, arch: NetworkArch
) -> Tuple[NetworkParams, TrainReport]:
    """Mini-batch SGD with early stopping on the validation MSE.

    Returns the parameters of the epoch with the lowest validation MSE; epoch 0
    is the untrained network.
    """
    if dataset.inputs.shape[1] != arch.input_len or dataset.labels.shape[1] != arch.output_len:
        raise ConfigurationError(
            f"dataset shapes {dataset.inputs.shape[1]}/{dataset.labels.shape[1]} do not fit "
            f"arch {arch.input_len}/{arch.output_len}",
            key_path="dataset.variant",
        )
    if config.seed is None:
        raise ConfigurationError("training needs a seed", key_path="train.seed")

    x_train, y_train = dataset.train_split()
    x_val, y_val = dataset.validation_split()
    rng = np.random.default_rng(config.seed)
    params = init_network(arch, config.seed)

    report = TrainReport()
    best_params = params
    epochs_without_improvement = 0
    start = time.perf_counter()

    def record_epoch(epoch: int, current: NetworkParams) -> EpochRecord:
        record = EpochRecord(
            epoch=epoch,
            train_mse=evaluate_mse(current, x_train, y_train),
            val_mse=evaluate_mse(current, x_val, y_val),
            steps=report.steps,
        )
        if not (math.isfinite(record.train_mse) and math.isfinite(record.val_mse)):
            report.history.append(record)
            report.wall_time_s = time.perf_counter() - start
            raise TrainingError(
                f"loss diverged at epoch {epoch}",
                diagnostics={"epoch": epoch, "train_mse": record.train_mse},
                report=report,
            )
        report.history.append(record)
        logger.info(
            "training_epoch_completed",
            epoch=epoch,
            steps=report.steps,
            train_mse=record.train_mse,
            val_mse=record.val_mse,
        )
        return record

    set_stage("training")
    try:
        logger.info(
            "training_started",
            variant=arch.variant.value,
            n_train=len(x_train),
            n_validation=len(x_val),
            alpha=config.alpha,
            batch_size=config.batch_size,
        )
        initial = record_epoch(0, params)
        report.best_val_mse = initial.val_mse

        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(len(x_train))
            for batch_start in range(0, len(order), config.batch_size):
                rows = order[batch_start : batch_start + config.batch_size]
                _, cache = forward(params, x_train[rows])
                grads = backward(params, cache, y_train[rows])
                try:
                    params = sgd_step(params, grads, config.alpha, len(rows))
                except TrainingError as e:
                    e.diagnostics.update(epoch=epoch, step=report.steps)
                    e.report = report
                    raise
                report.steps += 1
                if report.steps >= config.max_steps:
                    break

            record = record_epoch(epoch, params)
            if record.val_mse < report.best_val_mse:
                report.best_val_mse = record.val_mse
                report.best_epoch = epoch
                best_params = params
                epochs_without_improvement = 0
            else:
                epochs_without_improvement += 1

            if report.steps >= config.max_steps:
                report.stop_reason = StopReason.MAX_STEPS
                break
            if epochs_without_improvement >= config.patience:
                report.stop_reason = StopReason.EARLY_STOP
                break
        else:
            report.stop_reason = StopReason.MAX_EPOCHS

        report.wall_time_s = time.perf_counter() - start
        logger.info(
            "training_completed",
            stop_reason=report.stop_reason.value,
            steps=report.steps,
            best_epoch=report.best_epoch,
            best_val_mse=report.best_val_mse,
            wall_time_s=round(report.wall_time_s, 3),
        )
        return best_params, report
    except Exception as e:
        logger.error("training_failed", error=str(e), exc_info=True)
        raise
    finally:
        set_stage(None)
