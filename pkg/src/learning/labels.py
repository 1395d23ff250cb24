"""Timing-metric training targets and the label-mismatch diagnostic."""

from dataclasses import dataclass

import numpy as np

from src.models.errors import DomainError
from src.models.index import SystemConfig


@dataclass(frozen=True)
class LabelVec:
    gamma: np.ndarray  # uint8, ones on {theta+tau_hat+1, ..., theta+N_g}
    tau_hat: int
    theta: int


@dataclass(frozen=True)
class LabelMismatch:
    gamma_err: np.ndarray  # uint8, ones on {theta+min+1, ..., theta+max}
    tau_true: int
    tau_hat: int


def _check_theta(theta: int, config: SystemConfig) -> None:
    if not 0 <= theta <= config.N - 1:
        raise DomainError(f"theta must lie in [0, {config.N - 1}], got {theta}")


def _check_delay(name: str, delay: int, config: SystemConfig) -> None:
    if not 0 <= delay <= config.N_g - 1:
        raise DomainError(f"{name} must lie in [0, {config.N_g - 1}], got {delay}")


def sample_tau_hat(config: SystemConfig, rng: np.random.Generator) -> int:
    """Uniform integer on {floor(N_g/2), ..., N_g-1}."""
    return int(rng.integers(config.N_g // 2, config.N_g))


def make_label(theta: int, tau_hat: int, config: SystemConfig) -> LabelVec:
    _check_theta(theta, config)
    _check_delay("tau_hat", tau_hat, config)

    gamma = np.zeros(config.N_s, dtype=np.uint8)
    gamma[theta + tau_hat + 1 : theta + config.N_g + 1] = 1
    return LabelVec(gamma=gamma, tau_hat=int(tau_hat), theta=int(theta))


def label_mismatch(
    theta: int, tau_true: int, tau_hat: int, config: SystemConfig
) -> LabelMismatch:
    _check_theta(theta, config)
    _check_delay("tau_true", tau_true, config)
    _check_delay("tau_hat", tau_hat, config)

    low, high = sorted((tau_true, tau_hat))
    gamma_err = np.zeros(config.N_s, dtype=np.uint8)
    gamma_err[theta + low + 1 : theta + high + 1] = 1
    return LabelMismatch(gamma_err=gamma_err, tau_true=int(tau_true), tau_hat=int(tau_hat))
