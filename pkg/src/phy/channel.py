"""Multipath channel sampling and propagation of transmit frames."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.config.logging import get_logger
from src.models.errors import DomainError
from src.models.index import ChannelKind, ChannelSpec, SystemConfig
from src.phy.frame import TxFrame
from src.utils.index import complex_gaussian

logger = get_logger(__name__)

TDL_TABLE_PATH = Path(__file__).parent / "data" / "tdl_38901.csv"
TDL_PROFILE_NAMES = ("TDL-A", "TDL-B", "TDL-C")


@dataclass(frozen=True)
class PdpProfile:
    kind: ChannelKind
    tap_delays: np.ndarray  # integer samples, strictly increasing from 0
    tap_powers: np.ndarray  # linear, sums to 1
    eta: Optional[float] = None
    name: Optional[str] = None

    def __post_init__(self):
        delays, powers = self.tap_delays, self.tap_powers
        if delays.ndim != 1 or delays.shape != powers.shape or delays.size == 0:
            raise DomainError("tap_delays and tap_powers must be equal-length vectors")
        if delays[0] != 0 or np.any(np.diff(delays) <= 0):
            raise DomainError(f"tap delays must start at 0 and increase: {delays}")
        if np.any(powers <= 0):
            raise DomainError("tap powers must be positive")
        if abs(powers.sum() - 1.0) > 1e-9:
            raise DomainError(f"tap powers must sum to 1, got {powers.sum()}")

    @property
    def max_delay(self) -> int:
        return int(self.tap_delays[-1])


@dataclass(frozen=True)
class ChannelRealization:
    taps: np.ndarray  # complex h_l aligned with profile.tap_delays
    profile: PdpProfile


@dataclass(frozen=True)
class ObservationParams:
    theta: int
    epsilon: float
    snr_db: float
    noise_variance: float

    @classmethod
    def from_snr(
        cls, theta: int, snr_db: float, P_t: float, epsilon: float = 0.0
    ) -> "ObservationParams":
        return cls(
            theta=int(theta),
            epsilon=float(epsilon),
            snr_db=float(snr_db),
            noise_variance=snr_to_noise_variance(snr_db, P_t),
        )


@dataclass(frozen=True)
class Observation:
    y: np.ndarray  # length N_w
    params: ObservationParams
    channel: ChannelRealization  # ground truth, simulation only


def snr_to_noise_variance(snr_db: float, P_t: float) -> float:
    # snr_db = +inf is the noiseless sentinel
    return float(P_t * 10 ** (-snr_db / 10))


def _check_max_delay(delays: np.ndarray, max_delay: Optional[int]) -> None:
    if max_delay is not None and delays.size and delays.max() >= max_delay:
        raise DomainError(
            f"tap delay {int(delays.max())} reaches the cyclic prefix bound {max_delay}"
        )


def exponential_pdp(L: int, eta: float, max_delay: Optional[int] = None) -> PdpProfile:
    if L < 1:
        raise DomainError(f"L must be >= 1, got {L}")
    if eta < 0:
        raise DomainError(f"eta must be >= 0, got {eta}")
    if max_delay is not None and L > max_delay:
        raise DomainError(f"L={L} exceeds N_g={max_delay}: the last path would leave the CP")

    delays = np.arange(L, dtype=np.int64)
    weights = np.exp(-eta * delays)
    return PdpProfile(
        kind=ChannelKind.EXPONENTIAL,
        tap_delays=delays,
        tap_powers=weights / weights.sum(),
        eta=float(eta),
    )


def load_tdl_table(path: Path = TDL_TABLE_PATH) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def profile_from_taps(
    name: str,
    normalized_delays: Sequence[float],
    powers_db: Sequence[float],
    delay_spread: float,
    sample_period: float,
    max_delay: Optional[int] = None,
) -> PdpProfile:
    """Scale a normalized tap table to the sample grid.

    Delays are rounded half-up to the nearest sample; taps landing on the same
    sample have their powers merged.
    """
    if delay_spread < 0 or sample_period <= 0:
        raise DomainError("delay_spread must be >= 0 and sample_period > 0")

    normalized_delays = np.asarray(normalized_delays, dtype=np.float64)
    linear_powers = 10 ** (np.asarray(powers_db, dtype=np.float64) / 10)
    sample_delays = np.floor(normalized_delays * delay_spread / sample_period + 0.5)
    sample_delays = sample_delays.astype(np.int64)
    _check_max_delay(sample_delays, max_delay)

    merged_delays = np.unique(sample_delays)
    merged_powers = np.zeros(merged_delays.size)
    np.add.at(merged_powers, np.searchsorted(merged_delays, sample_delays), linear_powers)

    return PdpProfile(
        kind=ChannelKind.TDL,
        tap_delays=merged_delays - merged_delays[0],
        tap_powers=merged_powers / merged_powers.sum(),
        name=name,
    )


def tdl_profile(
    name: str,
    delay_spread: float,
    sample_period: float,
    max_delay: Optional[int] = None,
) -> PdpProfile:
    if name not in TDL_PROFILE_NAMES:
        raise DomainError(f"unknown TDL profile {name!r}, expected one of {TDL_PROFILE_NAMES}")

    table = load_tdl_table()
    rows = table[table["name"] == name]
    profile = profile_from_taps(
        name,
        rows["normalized_delay"].to_numpy(),
        rows["power_db"].to_numpy(),
        delay_spread,
        sample_period,
        max_delay,
    )
    logger.debug(
        "tdl_profile_built",
        profile=name,
        taps=int(profile.tap_delays.size),
        max_delay=profile.max_delay,
    )
    return profile


def profile_from_spec(spec: ChannelSpec, config: SystemConfig) -> PdpProfile:
    if spec.kind == ChannelKind.EXPONENTIAL:
        return exponential_pdp(spec.L, spec.resolved_eta(), max_delay=config.N_g)
    return tdl_profile(
        spec.name,
        spec.delay_spread,
        spec.sample_period or config.T,
        max_delay=config.N_g,
    )


def sample_channel(
    profile: PdpProfile, rng: np.random.Generator, deterministic: bool = False
) -> ChannelRealization:
    """Rayleigh taps h_l = sqrt(p_l) g_l; deterministic forces g_l = 1."""
    amplitudes = np.sqrt(profile.tap_powers)
    if deterministic:
        taps = amplitudes.astype(np.complex128)
    else:
        taps = amplitudes * complex_gaussian(rng, amplitudes.size, 1.0)
    return ChannelRealization(taps=taps, profile=profile)


def propagate(
    frame: TxFrame,
    channel: ChannelRealization,
    params: ObservationParams,
    rng: np.random.Generator,
) -> Observation:
    config = frame.config
    N_w = config.N_w
    if frame.samples.shape != (N_w,):
        raise DomainError(f"frame must hold N_w={N_w} samples, got {frame.samples.shape}")
    if channel.taps.shape != channel.profile.tap_delays.shape:
        raise DomainError("channel taps and profile delays differ in length")
    if params.theta != frame.theta:
        raise DomainError(f"observation theta {params.theta} != frame theta {frame.theta}")

    # Negative-index history is more random data of the same power
    history_len = channel.profile.max_delay
    history = complex_gaussian(rng, history_len, config.P_t)
    extended = np.concatenate([history, frame.samples])

    y = np.zeros(N_w, dtype=np.complex128)
    for h, delay in zip(channel.taps, channel.profile.tap_delays):
        start = history_len - int(delay)
        y += h * extended[start : start + N_w]

    n = np.arange(N_w)
    y = y * np.exp(2j * np.pi * params.epsilon * n / config.N)
    noise = complex_gaussian(rng, N_w, 1.0)
    y = y + np.sqrt(params.noise_variance) * noise
    return Observation(y=y, params=params, channel=channel)
