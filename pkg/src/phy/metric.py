"""Cross-correlation timing metric and the classic argmax synchronizer."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate

from src.models.errors import DomainError
from src.models.index import SystemConfig
from src.phy.channel import ChannelRealization, Observation
from src.phy.frame import TrainingSymbol


@dataclass(frozen=True)
class TimingMetricVec:
    m: np.ndarray  # length N_s, non-negative
    normalized: bool


def normalize_metric(metric: TimingMetricVec) -> TimingMetricVec:
    peak = metric.m.max() if metric.m.size else 0.0
    if peak == 0:
        return TimingMetricVec(m=metric.m.copy(), normalized=True)
    return TimingMetricVec(m=metric.m / peak, normalized=True)


def correlation_metric(y: np.ndarray, x: np.ndarray, search_len: int) -> np.ndarray:
    """M(d) = |sum_k x*(k) y(d+k)|^2 / sum_k |y(d+k)|^2 for d < search_len."""
    N = x.size
    if y.size < search_len + N - 1:
        raise DomainError(
            f"observation of {y.size} samples cannot cover {search_len} offsets of {N}"
        )

    # scipy conjugates the second argument: c(d) = sum_k y(d+k) x*(k)
    numerator = np.abs(correlate(y, x, mode="valid", method="fft")[:search_len]) ** 2
    energy = np.concatenate([[0.0], np.cumsum(np.abs(y) ** 2)])
    denominator = energy[N : N + search_len] - energy[:search_len]

    metric = np.zeros(search_len)
    # An all-zero window means no signal: M(d) = 0
    present = denominator > 0
    metric[present] = numerator[present] / denominator[present]
    return metric


def compute_metric(
    obs: Observation, symbol: TrainingSymbol, normalize: bool = False
) -> TimingMetricVec:
    config = symbol.config
    if obs.y.shape != (config.N_w,):
        raise DomainError(f"observation must hold N_w={config.N_w} samples, got {obs.y.shape}")
    if symbol.x.shape != (config.N,):
        raise DomainError(f"replica must hold N={config.N} samples, got {symbol.x.shape}")

    metric = TimingMetricVec(
        m=correlation_metric(obs.y, symbol.x, config.N_s), normalized=False
    )
    return normalize_metric(metric) if normalize else metric


def snr_factor(snr_db: float) -> float:
    """rho / (1 + rho) with rho = P_t / sigma_n^2; 1 in the noiseless limit."""
    if math.isinf(snr_db) and snr_db > 0:
        return 1.0
    rho = 10 ** (snr_db / 10)
    return rho / (1 + rho)


def ideal_metric(
    channel: ChannelRealization, theta: int, snr_db: float, config: SystemConfig
) -> TimingMetricVec:
    """Noise-limited metric: (rho/(1+rho)) * sum_l |h_l|^2 at the path arrivals."""
    factor = snr_factor(snr_db)

    m = np.zeros(config.N_s)
    symbol_start = theta + config.N_g
    for h, delay in zip(channel.taps, channel.profile.tap_delays):
        index = symbol_start + int(delay)
        if 0 <= index < config.N_s:
            m[index] += factor * abs(h) ** 2
    return TimingMetricVec(m=m, normalized=False)


def classic_estimate(metric: TimingMetricVec) -> int:
    if metric.m.size == 0:
        raise DomainError("metric is empty")
    # np.argmax returns the first maximum, so ties resolve to the lowest index
    return int(np.argmax(metric.m))
