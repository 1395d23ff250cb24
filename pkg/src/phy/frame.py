"""Training symbol and transmit frame generation.

The timing offset theta indexes the first cyclic-prefix sample; the symbol
proper starts at theta + N_g.
"""

import math
from dataclasses import dataclass

import numpy as np

from src.models.errors import ConfigurationError, DomainError
from src.models.index import SystemConfig
from src.utils.index import complex_gaussian


@dataclass(frozen=True)
class TrainingSymbol:
    S: np.ndarray  # frequency domain, length N
    s: np.ndarray  # time domain, length N
    x: np.ndarray  # local correlator replica, identical to s
    config: SystemConfig


@dataclass(frozen=True)
class TxFrame:
    samples: np.ndarray  # length N_w, pre-channel
    theta: int
    config: SystemConfig

    @property
    def cp_start(self) -> int:
        return self.theta

    @property
    def symbol_start(self) -> int:
        return self.theta + self.config.N_g


def zadoff_chu(N: int, root: int) -> np.ndarray:
    if math.gcd(root, N) != 1:
        raise ConfigurationError(
            f"Zadoff-Chu root {root} must be coprime with N={N}", key_path="seq_id"
        )
    k = np.arange(N)
    # even lengths use k^2, odd lengths k(k+1)
    exponent = k * k if N % 2 == 0 else k * (k + 1)
    return np.exp(-1j * np.pi * root * exponent / N)


def training_symbol_from_spectrum(S: np.ndarray, config: SystemConfig) -> TrainingSymbol:
    """Inverse DFT without 1/N, with S rescaled so that mean(|s|^2) = P_t."""
    S = np.asarray(S, dtype=np.complex128)
    if S.shape != (config.N,):
        raise DomainError(f"spectrum must have length N={config.N}, got {S.shape}")

    raw = config.N * np.fft.ifft(S)
    raw_power = np.mean(np.abs(raw) ** 2)
    if raw_power == 0:
        raise DomainError("spectrum is identically zero")

    scaled_S = S * np.sqrt(config.P_t / raw_power)
    s = config.N * np.fft.ifft(scaled_S)
    s.setflags(write=False)
    scaled_S.setflags(write=False)
    return TrainingSymbol(S=scaled_S, s=s, x=s, config=config)


def generate_training_symbol(config: SystemConfig, seq_id: int = 1) -> TrainingSymbol:
    if not isinstance(config, SystemConfig):
        raise ConfigurationError("generate_training_symbol needs a SystemConfig")
    return training_symbol_from_spectrum(zadoff_chu(config.N, seq_id), config)


def assemble_frame(
    symbol: TrainingSymbol, theta: int, config: SystemConfig, rng: np.random.Generator
) -> TxFrame:
    N, N_g = config.N, config.N_g
    if not 0 <= theta <= N - 1:
        raise DomainError(f"theta must lie in [0, {N - 1}], got {theta}")

    # Random data of the same power stands in for the neighbouring symbols
    samples = complex_gaussian(rng, config.N_w, config.P_t)
    samples[theta : theta + N_g] = symbol.s[N - N_g :]
    samples[theta + N_g : theta + N_g + N] = symbol.s
    samples.setflags(write=False)
    return TxFrame(samples=samples, theta=int(theta), config=config)
