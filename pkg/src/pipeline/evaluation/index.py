import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Union

import numpy as np

from src.config.logging import get_logger, set_stage
from src.learning.lightnet import predict
from src.models.errors import CheckpointError, ConfigurationError, DomainError
from src.models.index import EvalConfig, Method, NetworkVariant, RunConfig, SystemConfig
from src.phy.channel import ObservationParams, profile_from_spec, propagate, sample_channel
from src.phy.frame import assemble_frame, generate_training_symbol
from src.phy.metric import compute_metric
from src.pipeline.evaluation.utils import EvalResult, EvalRow
from src.pipeline.training.index import network_input
from src.pipeline.training.utils import ModelCheckpoint
from src.services.workers import ordered_map
from src.utils.index import config_digest, derive_rng

logger = get_logger(__name__)

FEATURE_VARIANTS = (NetworkVariant.PROP, NetworkVariant.RAW_SIGNAL_PROP)


@dataclass
class TrialContext:
    theta: int
    tau_true: int
    metric: np.ndarray  # unnormalized timing metric, length N_s
    features: Dict[NetworkVariant, np.ndarray]  # float32 network inputs


BatchEstimator = Callable[[List[TrialContext]], np.ndarray]


def estimate_offset(output: np.ndarray) -> int:
    """Smallest index of the maximum network output."""
    output = np.asarray(output)
    if output.ndim != 1 or output.size == 0:
        raise DomainError(f"network output must be a non-empty vector, got {output.shape}")
    return int(np.argmax(output))


def is_correct(theta_hat, theta, tau_true, config: SystemConfig) -> Union[bool, np.ndarray]:
    """theta_hat lies in {theta+tau_true+1, ..., theta+N_g}; elementwise for arrays."""
    theta_hat, theta, tau_true = (np.asarray(v) for v in (theta_hat, theta, tau_true))
    correct = (theta_hat >= theta + tau_true + 1) & (theta_hat <= theta + config.N_g)
    return bool(correct) if correct.ndim == 0 else correct


def _feature_variant(variant: NetworkVariant) -> NetworkVariant:
    # Prop and the dense baseline share the normalized metric input
    return variant if variant == NetworkVariant.RAW_SIGNAL_PROP else NetworkVariant.PROP


def classic_argmax_estimator(trials: List[TrialContext]) -> np.ndarray:
    return np.array([int(np.argmax(trial.metric)) for trial in trials])


def network_estimator(ckpt: ModelCheckpoint) -> BatchEstimator:
    variant = _feature_variant(ckpt.arch.variant)

    def estimate(trials: List[TrialContext]) -> np.ndarray:
        inputs = np.stack([trial.features[variant] for trial in trials])
        # first maximum per row, same tie rule as estimate_offset
        return np.argmax(predict(ckpt.params, inputs), axis=1)

    return estimate


def check_models(
    config: EvalConfig, models: Mapping[Method, ModelCheckpoint], system: SystemConfig
) -> None:
    expected_digest = config_digest(system)
    for method in config.methods:
        if method == Method.CLASSIC_ARGMAX:
            continue
        if method not in models:
            raise ConfigurationError(f"no checkpoint for method {method.value}", key_path="models")
        ckpt = models[method]
        if ckpt.method != method:
            raise CheckpointError(
                f"checkpoint implements {ckpt.method.value}, not {method.value}"
            )
        if ckpt.config_digest != expected_digest:
            raise CheckpointError(
                f"checkpoint for {method.value} was trained with a different system config"
            )
        if ckpt.arch.output_len != system.N_s:
            raise CheckpointError(
                f"checkpoint for {method.value} outputs {ckpt.arch.output_len} positions, "
                f"system needs N_s={system.N_s}"
            )


def run_monte_carlo(
    config: EvalConfig,
    models: Mapping[Method, ModelCheckpoint],
    system: SystemConfig,
    workers: Optional[int] = None,
    extra_estimators: Optional[Dict[str, BatchEstimator]] = None,
) -> EvalResult:
    """
    * Trial t at SNR point s draws theta, the channel taps and the noise from
      derive_rng(master_seed, s, t); every method scores the same trials.
    * A trial is an error when the estimate misses the ISI-free region of the
      drawn channel's true maximum delay.
    """
    if config.master_seed is None:
        raise ConfigurationError("evaluation needs a master_seed", key_path="eval.master_seed")
    check_models(config, models, system)

    profile = profile_from_spec(config.channel, system)
    channel_label = config.channel.label()
    symbol = generate_training_symbol(system, config.seq_id)

    estimators: Dict[str, BatchEstimator] = {}
    for method in config.methods:
        if method == Method.CLASSIC_ARGMAX:
            estimators[method.value] = classic_argmax_estimator
        else:
            estimators[method.value] = network_estimator(models[method])
    estimators.update(extra_estimators or {})

    def run_trial(snr_index: int, snr_db: float, trial_index: int) -> TrialContext:
        rng = derive_rng(config.master_seed, snr_index, trial_index)
        theta = int(rng.integers(0, system.N))
        frame = assemble_frame(symbol, theta, system, rng)
        channel = sample_channel(profile, rng)
        params = ObservationParams.from_snr(theta, snr_db, system.P_t, config.epsilon)
        obs = propagate(frame, channel, params, rng)
        return TrialContext(
            theta=theta,
            tau_true=profile.max_delay,
            metric=compute_metric(obs, symbol).m,
            features={variant: network_input(obs, symbol, variant) for variant in FEATURE_VARIANTS},
        )

    result = EvalResult()
    set_stage("evaluation")
    try:
        logger.info(
            "monte_carlo_started",
            channel=channel_label,
            max_delay=profile.max_delay,
            methods=list(estimators),
            trials_per_point=config.trials_per_point,
        )
        for snr_index, snr_db in enumerate(config.snr_points_db):
            start = time.perf_counter()
            trials = ordered_map(
                lambda t: run_trial(snr_index, snr_db, t),
                range(config.trials_per_point),
                workers,
            )
            thetas = np.array([trial.theta for trial in trials])
            tau_true = np.array([trial.tau_true for trial in trials])

            for name, estimator in estimators.items():
                offsets = np.asarray(estimator(trials))
                correct = is_correct(offsets, thetas, tau_true, system)
                row = EvalRow(
                    method=name,
                    channel=channel_label,
                    snr_db=float(snr_db),
                    trials=len(trials),
                    errors=int(np.count_nonzero(~correct)),
                )
                result.rows.append(row)
            logger.info(
                "monte_carlo_point_completed",
                snr_db=snr_db,
                error_prob={row.method: row.error_prob for row in result.rows[-len(estimators):]},
                elapsed_s=round(time.perf_counter() - start, 3),
            )
        logger.info("monte_carlo_completed", rows=len(result.rows))
        return result
    except Exception as e:
        logger.error("monte_carlo_failed", channel=channel_label, error=str(e), exc_info=True)
        raise
    finally:
        set_stage(None)


def run_sweep(
    config: RunConfig,
    models: Mapping[Method, ModelCheckpoint],
    workers: Optional[int] = None,
) -> EvalResult:
    """Every configured channel crossed with the sweep's SNR points."""
    if config.sweep is None:
        raise ConfigurationError("sweep section is missing", key_path="sweep")

    snr_points = config.sweep.snr_points_db or config.eval.snr_points_db
    result = EvalResult()
    for channel in config.sweep.channels:
        eval_config = config.eval.model_copy(
            update={"channel": channel, "snr_points_db": snr_points}
        )
        result.extend(run_monte_carlo(eval_config, models, config.system, workers))
    return result
