"""Lightweight timing-metric network written directly in numpy.

Prop / RawSignalProp: same-length 1-D convolution (kernel N_g+1, 4 filters)
-> ReLU -> average across filters -> dense -> sigmoid.
DnnBaseline: dense -> ReLU -> dense -> ReLU -> dense -> sigmoid, hidden
width N_s.

forward/backward take one input vector or a batch matrix (one row per
sample); batch gradients are summed over rows.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict
from scipy.special import expit

from src.config.logging import get_logger
from src.learning.labels import LabelVec
from src.models.errors import ContractViolation, DomainError, TrainingError
from src.models.index import NetworkVariant, SystemConfig
from src.utils.index import derive_rng

logger = get_logger(__name__)

CONV_FILTERS = 4
GRAD_CHECK_STEP = 1e-5
GRAD_CHECK_TOLERANCE = 1e-4
GRAD_CHECK_FLOOR = 1e-5


class NetworkArch(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    variant: NetworkVariant
    input_len: int
    output_len: int
    kernel_len: Optional[int] = None
    filters: Optional[int] = None
    hidden_width: Optional[int] = None

    @property
    def is_convolutional(self) -> bool:
        return self.variant != NetworkVariant.DNN_BASELINE


def build_arch(variant: NetworkVariant, config: SystemConfig) -> NetworkArch:
    if variant == NetworkVariant.DNN_BASELINE:
        return NetworkArch(
            variant=variant,
            input_len=config.N_s,
            output_len=config.N_s,
            hidden_width=config.N_s,
        )
    input_len = config.N_w if variant == NetworkVariant.RAW_SIGNAL_PROP else config.N_s
    return NetworkArch(
        variant=variant,
        input_len=input_len,
        output_len=config.N_s,
        kernel_len=config.N_g + 1,
        filters=CONV_FILTERS,
    )


def tensor_shapes(arch: NetworkArch) -> Dict[str, tuple]:
    if arch.is_convolutional:
        return {
            "conv_weights": (arch.filters, arch.kernel_len),
            "conv_bias": (arch.filters,),
            "dense_weights": (arch.output_len, arch.input_len),
            "dense_bias": (arch.output_len,),
        }
    H = arch.hidden_width
    return {
        "dense1_weights": (H, arch.input_len),
        "dense1_bias": (H,),
        "dense2_weights": (H, H),
        "dense2_bias": (H,),
        "dense3_weights": (arch.output_len, H),
        "dense3_bias": (arch.output_len,),
    }


@dataclass
class NetworkParams:
    arch: NetworkArch
    tensors: Dict[str, np.ndarray]

    def __post_init__(self):
        expected = tensor_shapes(self.arch)
        if list(self.tensors) != list(expected):
            raise DomainError(f"tensor names {list(self.tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise DomainError(
                    f"{name} has shape {self.tensors[name].shape}, expected {shape}"
                )

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            arch=self.arch, tensors={k: v.copy() for k, v in self.tensors.items()}
        )


@dataclass
class Gradients:
    tensors: Dict[str, np.ndarray]
    samples: int  # rows summed into these gradients


@dataclass
class ForwardCache:
    params: NetworkParams
    inputs: np.ndarray  # always 2-D
    activations: Dict[str, np.ndarray]
    output: np.ndarray  # always 2-D
    batched: bool


@dataclass
class GradCheckReport:
    variant: NetworkVariant
    trials: int
    max_relative_error: float
    per_tensor: Dict[str, float] = field(default_factory=dict)
    tolerance: float = GRAD_CHECK_TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_relative_error)) and (
            self.max_relative_error < self.tolerance
        )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "trials": self.trials,
            "max_relative_error": self.max_relative_error,
            "per_tensor": self.per_tensor,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_network(arch: NetworkArch, seed: int) -> NetworkParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(arch).items():
        if name.endswith("_bias"):
            tensors[name] = np.zeros(shape)
        elif name == "conv_weights":
            # one input channel: fan_in = kernel, fan_out = filters * kernel
            tensors[name] = _glorot(rng, shape, arch.kernel_len, arch.filters * arch.kernel_len)
        else:
            fan_out, fan_in = shape
            tensors[name] = _glorot(rng, shape, fan_in, fan_out)
    return NetworkParams(arch=arch, tensors=tensors)


def _conv_padding(kernel_len: int) -> tuple:
    left = (kernel_len - 1) // 2
    return left, kernel_len - 1 - left


def forward(params: NetworkParams, input: np.ndarray):
    arch = params.arch
    inputs = np.asarray(input, dtype=np.float64)
    batched = inputs.ndim == 2
    inputs = np.atleast_2d(inputs)
    if inputs.ndim != 2 or inputs.shape[1] != arch.input_len:
        raise DomainError(
            f"input length {inputs.shape[-1]} does not match arch input_len {arch.input_len}"
        )

    t = params.tensors
    activations = {}
    if arch.is_convolutional:
        padded = np.pad(inputs, ((0, 0), _conv_padding(arch.kernel_len)))
        windows = sliding_window_view(padded, arch.kernel_len, axis=1)  # [B, I, K]
        conv = np.einsum("bik,fk->bfi", windows, t["conv_weights"])
        conv += t["conv_bias"][None, :, None]
        pooled = np.maximum(conv, 0.0).mean(axis=1)  # average across filters
        logits = pooled @ t["dense_weights"].T + t["dense_bias"]
        activations.update(windows=windows, conv=conv, pooled=pooled)
    else:
        hidden1 = inputs @ t["dense1_weights"].T + t["dense1_bias"]
        relu1 = np.maximum(hidden1, 0.0)
        hidden2 = relu1 @ t["dense2_weights"].T + t["dense2_bias"]
        relu2 = np.maximum(hidden2, 0.0)
        logits = relu2 @ t["dense3_weights"].T + t["dense3_bias"]
        activations.update(hidden1=hidden1, relu1=relu1, hidden2=hidden2, relu2=relu2)

    output = expit(logits)
    cache = ForwardCache(
        params=params,
        inputs=inputs,
        activations=activations,
        output=output,
        batched=batched,
    )
    return (output if batched else output[0]), cache


def predict(params: NetworkParams, inputs: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Batched forward pass without keeping caches around."""
    inputs = np.atleast_2d(inputs)
    outputs = [forward(params, inputs[i : i + chunk])[0] for i in range(0, len(inputs), chunk)]
    return np.concatenate(outputs, axis=0) if outputs else np.zeros((0, params.arch.output_len))


def _label_array(label: Union[LabelVec, np.ndarray]) -> np.ndarray:
    if isinstance(label, LabelVec):
        return label.gamma.astype(np.float64)
    return np.asarray(label, dtype=np.float64)


def mse_loss(output: np.ndarray, label: Union[LabelVec, np.ndarray]) -> float:
    """Sum of squared errors; over every row when given a batch."""
    output = np.asarray(output, dtype=np.float64)
    target = _label_array(label)
    if output.shape != target.shape:
        raise DomainError(f"output shape {output.shape} != label shape {target.shape}")
    return float(np.sum((target - output) ** 2))


def backward(
    params: NetworkParams, cache: ForwardCache, label: Union[LabelVec, np.ndarray]
) -> Gradients:
    if cache.params is not params:
        raise ContractViolation("forward cache was produced by different parameters")

    target = np.atleast_2d(_label_array(label))
    output = cache.output
    if target.shape != output.shape:
        raise DomainError(f"label shape {target.shape} != output shape {output.shape}")

    t = params.tensors
    a = cache.activations
    # d/du of sum (gamma - sigmoid(u))^2
    d_logits = 2.0 * (output - target) * output * (1.0 - output)

    grads = {}
    if params.arch.is_convolutional:
        grads["dense_weights"] = d_logits.T @ a["pooled"]
        grads["dense_bias"] = d_logits.sum(axis=0)
        d_pooled = d_logits @ t["dense_weights"]
        d_conv = (d_pooled[:, None, :] / params.arch.filters) * (a["conv"] > 0)
        grads["conv_weights"] = np.einsum("bfi,bik->fk", d_conv, a["windows"])
        grads["conv_bias"] = d_conv.sum(axis=(0, 2))
        ordered = ["conv_weights", "conv_bias", "dense_weights", "dense_bias"]
    else:
        grads["dense3_weights"] = d_logits.T @ a["relu2"]
        grads["dense3_bias"] = d_logits.sum(axis=0)
        d_hidden2 = (d_logits @ t["dense3_weights"]) * (a["hidden2"] > 0)
        grads["dense2_weights"] = d_hidden2.T @ a["relu1"]
        grads["dense2_bias"] = d_hidden2.sum(axis=0)
        d_hidden1 = (d_hidden2 @ t["dense2_weights"]) * (a["hidden1"] > 0)
        grads["dense1_weights"] = d_hidden1.T @ cache.inputs
        grads["dense1_bias"] = d_hidden1.sum(axis=0)
        ordered = list(tensor_shapes(params.arch))

    return Gradients(tensors={name: grads[name] for name in ordered}, samples=len(output))


def sgd_step(
    params: NetworkParams, grads: Gradients, alpha: float, batch_size: int
) -> NetworkParams:
    """p <- p - alpha * grad / batch_size for every parameter."""
    if alpha < 0:
        raise DomainError(f"alpha must be non-negative, got {alpha}")
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")

    non_finite = {
        name: int(np.count_nonzero(~np.isfinite(g))) for name, g in grads.tensors.items()
    }
    non_finite = {name: count for name, count in non_finite.items() if count}
    if non_finite:
        logger.error("sgd_step_non_finite_gradient", tensors=non_finite)
        raise TrainingError(
            "non-finite gradient", diagnostics={"non_finite_entries": non_finite}
        )

    updated = {
        name: value - alpha * (grads.tensors[name] / batch_size)
        for name, value in params.tensors.items()
    }
    return NetworkParams(arch=params.arch, tensors=updated)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_CHECK_FLOOR)
    return np.abs(analytic - numeric) / scale


def numerical_gradients(
    params: NetworkParams, inputs: np.ndarray, labels: np.ndarray, step: float
) -> Dict[str, np.ndarray]:
    """Central differences of the batch loss for every parameter entry."""
    numeric = {}
    for name, tensor in params.tensors.items():
        grad = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            loss_plus = mse_loss(forward(params, inputs)[0], labels)
            flat[index] = original - step
            loss_minus = mse_loss(forward(params, inputs)[0], labels)
            flat[index] = original
            grad.reshape(-1)[index] = (loss_plus - loss_minus) / (2 * step)
        numeric[name] = grad
    return numeric


def grad_check(
    arch: NetworkArch,
    seed: int,
    trials: int,
    batch: int = 2,
    step: float = GRAD_CHECK_STEP,
    backward_fn: Callable = backward,
) -> GradCheckReport:
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")

    per_tensor: Dict[str, float] = {}
    for trial in range(trials):
        rng = derive_rng(seed, trial)
        params = init_network(arch, int(rng.integers(2**31)))
        for name, tensor in params.tensors.items():
            if name.endswith("_bias"):
                tensor[...] = rng.uniform(-0.1, 0.1, size=tensor.shape)
        inputs = rng.uniform(0.0, 1.0, size=(batch, arch.input_len))
        labels = (rng.uniform(size=(batch, arch.output_len)) < 0.2).astype(np.float64)

        _, cache = forward(params, inputs)
        analytic = backward_fn(params, cache, labels).tensors
        numeric = numerical_gradients(params.copy(), inputs, labels, step)
        for name in numeric:
            error = float(_relative_error(analytic[name], numeric[name]).max())
            per_tensor[name] = max(per_tensor.get(name, 0.0), error)

    report = GradCheckReport(
        variant=arch.variant,
        trials=trials,
        max_relative_error=max(per_tensor.values()),
        per_tensor=per_tensor,
    )
    logger.info(
        "grad_check_completed",
        variant=arch.variant.value,
        trials=trials,
        max_relative_error=report.max_relative_error,
        passed=report.passed,
    )
    return report


def toy_system() -> SystemConfig:
    return SystemConfig(N=16, N_g=4)


def grad_check_all(
    seed: int = 0, trials: int = 10, config: Optional[SystemConfig] = None
) -> List[GradCheckReport]:
    config = config or toy_system()
    return [grad_check(build_arch(variant, config), seed, trials) for variant in NetworkVariant]
