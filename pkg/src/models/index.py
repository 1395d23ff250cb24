import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveInt,
    field_validator,
    model_validator,
)


class NetworkVariant(str, Enum):
    PROP = "Prop"
    DNN_BASELINE = "DnnBaseline"
    RAW_SIGNAL_PROP = "RawSignalProp"


class LabelMode(str, Enum):
    RANDOM_TAU_HAT = "RandomTauHat"
    FIXED_TAU_HAT = "FixedTauHat"


class Method(str, Enum):
    PROP = "Prop"
    PROP_FIXED_TAU = "PropFixedTau"
    PROP_RAW_SIGNAL = "PropRawSignal"
    DNN = "Dnn"
    CLASSIC_ARGMAX = "ClassicArgmax"


class ChannelKind(str, Enum):
    EXPONENTIAL = "Exponential"
    TDL = "TDL"


class ComplexityMethod(str, Enum):
    JSANDCE = "JSandCE"
    ELM = "ELM"
    DNN = "DNN"
    PROPOSED = "Proposed"
    NN_ONLY = "NNOnly"
    CORRELATOR = "Correlator"


class StopReason(str, Enum):
    MAX_STEPS = "max_steps"
    MAX_EPOCHS = "max_epochs"
    EARLY_STOP = "early_stop"


class SystemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    N: PositiveInt = Field(128, description="Sub-carrier count (samples)")
    N_g: PositiveInt = Field(32, description="Cyclic prefix length (samples)")
    P_t: float = Field(1.0, gt=0, description="Transmit power (linear)")
    T: float = Field(50e-9, gt=0, description="Sample period in seconds (metadata)")

    @field_validator("N")
    @classmethod
    def check_power_of_two(cls, value: int) -> int:
        if value < 8 or value & (value - 1):
            raise ValueError(f"N must be a power of two >= 8, got {value}")
        return value

    @model_validator(mode="after")
    def check_cp_length(self):
        # N_g = N/4 is the reference configuration, so the quarter is inclusive
        if 4 * self.N_g > self.N:
            raise ValueError(
                f"N_g must satisfy 0 < N_g <= N/4, got N_g={self.N_g} for N={self.N}"
            )
        return self

    @property
    def N_w(self) -> int:
        return 2 * self.N + self.N_g

    @property
    def N_s(self) -> int:
        return self.N + self.N_g


class DatasetGenConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    n_samples: PositiveInt = Field(10_000, description="Data set size N_t")
    val_fraction: float = Field(0.25, gt=0, lt=1)
    snr_range_db: Tuple[float, float] = (0.0, 20.0)
    eta_range: Tuple[float, float] = (0.01, 0.2)
    theta_range: Optional[Tuple[int, int]] = Field(
        None, description="Inclusive timing-offset range, defaults to [0, N-1]"
    )
    variant: NetworkVariant = NetworkVariant.PROP
    label_mode: LabelMode = LabelMode.RANDOM_TAU_HAT
    fixed_tau_hat: Optional[int] = Field(None, ge=0)
    master_seed: Optional[int] = None
    epsilon: float = Field(0.0, description="Normalized CFO applied to every sample")
    seq_id: PositiveInt = Field(1, description="Zadoff-Chu root of the training symbol")

    @field_validator("snr_range_db", "eta_range", "theta_range")
    @classmethod
    def check_interval(cls, value):
        if value is not None and value[0] > value[1]:
            raise ValueError(f"interval lower bound exceeds upper bound: {value}")
        return value

    @model_validator(mode="after")
    def check_label_mode(self):
        if self.label_mode == LabelMode.FIXED_TAU_HAT and self.fixed_tau_hat is None:
            raise ValueError("label_mode FixedTauHat requires fixed_tau_hat")
        if self.eta_range[0] < 0:
            raise ValueError("eta_range must be non-negative")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    alpha: float = Field(0.002, ge=0, description="SGD learning rate")
    batch_size: PositiveInt = 128
    max_steps: PositiveInt = 1_000_000
    max_epochs: PositiveInt = 400
    patience: PositiveInt = 10
    seed: Optional[int] = None


class ChannelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: ChannelKind = ChannelKind.EXPONENTIAL
    L: Optional[PositiveInt] = Field(None, description="Exponential path count")
    eta: Optional[float] = Field(
        None, ge=0, description="Decay exponent, defaults to a 10 dB total decay"
    )
    name: Optional[str] = Field(None, description="TDL profile name")
    delay_spread: Optional[float] = Field(None, ge=0, description="TDL delay spread (s)")
    sample_period: Optional[float] = Field(
        None, gt=0, description="Defaults to the system sample period"
    )

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.kind == ChannelKind.EXPONENTIAL and self.L is None:
            raise ValueError("exponential channel requires L")
        if self.kind == ChannelKind.TDL and (
            self.name is None or self.delay_spread is None
        ):
            raise ValueError("TDL channel requires name and delay_spread")
        return self

    def resolved_eta(self) -> float:
        if self.eta is not None:
            return self.eta
        if self.L is None or self.L == 1:
            return 0.0
        return -math.log(10 ** (-10 / 10)) / (self.L - 1)

    def label(self) -> str:
        if self.kind == ChannelKind.EXPONENTIAL:
            return f"exp-L{self.L}-eta{self.resolved_eta():.6f}"
        return f"{self.name}-ds{self.delay_spread * 1e9:.1f}ns"


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    snr_points_db: List[float] = Field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    channel: ChannelSpec = Field(default_factory=lambda: ChannelSpec(L=23))
    trials_per_point: PositiveInt = 5_000
    methods: List[Method] = Field(default_factory=lambda: [Method.CLASSIC_ARGMAX])
    master_seed: Optional[int] = None
    epsilon: float = 0.0
    seq_id: PositiveInt = 1

    @field_validator("snr_points_db", "methods")
    @classmethod
    def check_non_empty(cls, value):
        if not value:
            raise ValueError("must not be empty")
        return value


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    channels: List[ChannelSpec]
    snr_points_db: Optional[List[float]] = None


class ComplexityDims(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    N: PositiveInt
    N_s: PositiveInt
    N_g: PositiveInt
    L: PositiveInt


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemConfig = Field(default_factory=SystemConfig)
    dataset: DatasetGenConfig = Field(default_factory=DatasetGenConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    sweep: Optional[SweepConfig] = None
    models: Dict[Method, str] = Field(
        default_factory=dict, description="Checkpoint path per evaluated method"
    )
    output_dir: Optional[str] = None
    master_seed: int = 0
    workers: Optional[PositiveInt] = None

    @model_validator(mode="after")
    def fill_seeds(self):
        # Sub-configs without their own seed inherit the run's master seed
        if self.dataset.master_seed is None:
            self.dataset = self.dataset.model_copy(update={"master_seed": self.master_seed})
        if self.train.seed is None:
            self.train = self.train.model_copy(update={"seed": self.master_seed})
        if self.eval.master_seed is None:
            self.eval = self.eval.model_copy(update={"master_seed": self.master_seed})
        return self
