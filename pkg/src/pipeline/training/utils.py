import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from src.config.logging import get_logger
from src.learning.lightnet import NetworkArch, NetworkParams, tensor_shapes
from src.models.errors import CheckpointError
from src.models.index import DatasetGenConfig, Method, StopReason, SystemConfig
from src.utils.index import config_digest, sha256_bytes

logger = get_logger(__name__)

DATASET_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"SYNCKPT1"
META_COLUMNS = ["sample_index", "theta", "tau_true", "tau_hat", "eta", "snr_db"]


@dataclass
class Dataset:
    inputs: np.ndarray  # float32 [n_samples, input_len]
    labels: np.ndarray  # uint8 [n_samples, N_s]
    meta: pd.DataFrame  # one row per sample, META_COLUMNS
    config: DatasetGenConfig
    system: SystemConfig

    @property
    def n_samples(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def n_validation(self) -> int:
        return int(math.floor(self.n_samples * self.config.val_fraction + 0.5))

    @property
    def n_train(self) -> int:
        return self.n_samples - self.n_validation

    def train_split(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.inputs[: self.n_train], self.labels[: self.n_train]

    def validation_split(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.inputs[self.n_train :], self.labels[self.n_train :]


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    steps: int


@dataclass
class TrainReport:
    history: List[EpochRecord] = field(default_factory=list)
    steps: int = 0
    stop_reason: Optional[StopReason] = None
    wall_time_s: float = 0.0
    best_epoch: int = 0
    best_val_mse: float = math.inf

    def to_dict(self, include_wall_time: bool = True) -> dict:
        document = {
            "history": [asdict(record) for record in self.history],
            "steps": self.steps,
            "stop_reason": self.stop_reason.value if self.stop_reason else None,
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_mse,
        }
        if include_wall_time:
            document["wall_time_s"] = self.wall_time_s
        return document


@dataclass
class ModelCheckpoint:
    params: NetworkParams
    method: Method
    config_digest: str  # SystemConfig digest, the evaluation compatibility gate
    generator_digest: str = ""  # digest of the dataset + training configs
    format_version: int = CHECKPOINT_FORMAT_VERSION

    @property
    def arch(self) -> NetworkArch:
        return self.params.arch


def save_dataset(dataset: Dataset, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    input_bytes = np.ascontiguousarray(dataset.inputs, dtype="<f4").tobytes()
    label_bytes = np.ascontiguousarray(dataset.labels, dtype=np.uint8).tobytes()
    (directory / "inputs.f32").write_bytes(input_bytes)
    (directory / "labels.u8").write_bytes(label_bytes)

    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "n_samples": dataset.n_samples,
        "input_len": int(dataset.inputs.shape[1]),
        "output_len": int(dataset.labels.shape[1]),
        "n_train": dataset.n_train,
        "n_validation": dataset.n_validation,
        "system": dataset.system.model_dump(mode="json"),
        "system_digest": config_digest(dataset.system),
        "dataset_config": dataset.config.model_dump(mode="json"),
        "inputs_sha256": sha256_bytes(input_bytes),
        "labels_sha256": sha256_bytes(label_bytes),
        "samples": dataset.meta[META_COLUMNS].to_dict(orient="list"),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    logger.info("dataset_saved", directory=str(directory), n_samples=dataset.n_samples)
    return directory


def load_dataset(directory: Path) -> Dataset:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text())
        input_bytes = (directory / "inputs.f32").read_bytes()
        label_bytes = (directory / "labels.u8").read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"incomplete dataset directory {directory}: {str(e)}")
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable dataset metadata in {directory}: {str(e)}")

    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise CheckpointError(f"unsupported dataset format {meta.get('format_version')}")
    n, input_len, output_len = meta["n_samples"], meta["input_len"], meta["output_len"]
    if len(input_bytes) != 4 * n * input_len or len(label_bytes) != n * output_len:
        raise CheckpointError(f"dataset payload size mismatch in {directory}")
    if sha256_bytes(input_bytes) != meta["inputs_sha256"] or (
        sha256_bytes(label_bytes) != meta["labels_sha256"]
    ):
        raise CheckpointError(f"dataset payload digest mismatch in {directory}")

    system = SystemConfig(**meta["system"])
    if config_digest(system) != meta["system_digest"]:
        raise CheckpointError("dataset system digest does not match its system config")

    inputs = np.frombuffer(input_bytes, dtype="<f4").reshape(n, input_len).astype(np.float32)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).reshape(n, output_len).copy()
    return Dataset(
        inputs=inputs,
        labels=labels,
        meta=pd.DataFrame(meta["samples"], columns=META_COLUMNS),
        config=DatasetGenConfig(**meta["dataset_config"]),
        system=system,
    )


def save_checkpoint(ckpt: ModelCheckpoint, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    tensors, offset, chunks = [], 0, []
    for name, tensor in ckpt.params.tensors.items():
        data = np.ascontiguousarray(tensor, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        offset += len(data)
        chunks.append(data)
    payload = b"".join(chunks)

    header = {
        "arch": ckpt.arch.model_dump(mode="json"),
        "method": ckpt.method.value,
        "config_digest": ckpt.config_digest,
        "generator_digest": ckpt.generator_digest,
        "tensors": tensors,
        "payload_sha256": sha256_bytes(payload),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<II", ckpt.format_version, len(header_bytes))
        + header_bytes
        + payload
    )
    path.write_bytes(blob)
    logger.info("checkpoint_saved", path=str(path), method=ckpt.method.value)
    return path


def load_checkpoint(path: Path, expected_digest: Optional[str] = None) -> ModelCheckpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")

    prefix_len = len(CHECKPOINT_MAGIC) + 8
    if len(blob) < prefix_len or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, header_len = struct.unpack("<II", blob[len(CHECKPOINT_MAGIC) : prefix_len])
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    if len(blob) < prefix_len + header_len:
        raise CheckpointError(f"{path} is truncated inside its header")

    try:
        header = json.loads(blob[prefix_len : prefix_len + header_len].decode("utf-8"))
        arch = NetworkArch(**header["arch"])
        method = Method(header["method"])
        digest = str(header["config_digest"])
        payload_sha256 = header["payload_sha256"]
        entries = [
            (str(entry["name"]), [int(n) for n in entry["shape"]], int(entry["offset"]))
            for entry in header["tensors"]
        ]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path} has a corrupted header: {str(e)}")

    payload = blob[prefix_len + header_len :]
    expected_shapes = tensor_shapes(arch)
    expected_size = sum(8 * int(np.prod(shape)) for shape in expected_shapes.values())
    if len(payload) != expected_size:
        raise CheckpointError(
            f"{path} payload holds {len(payload)} bytes, expected {expected_size}"
        )
    if sha256_bytes(payload) != payload_sha256:
        raise CheckpointError(f"{path} payload digest mismatch")

    table = {name: (shape, start) for name, shape, start in entries}
    if {name: tuple(shape) for name, (shape, _) in table.items()} != {
        name: tuple(shape) for name, shape in expected_shapes.items()
    }:
        raise CheckpointError(f"{path} tensor table does not match its architecture")

    tensors = {}
    for name in expected_shapes:
        shape, start = table[name]
        count = int(np.prod(shape))
        if start < 0 or start + 8 * count > len(payload):
            raise CheckpointError(f"{path} tensor {name} lies outside the payload")
        tensors[name] = (
            np.frombuffer(payload[start : start + 8 * count], dtype="<f8")
            .reshape(shape)
            .astype(np.float64)
        )

    ckpt = ModelCheckpoint(
        params=NetworkParams(arch=arch, tensors=tensors),
        method=method,
        config_digest=digest,
        generator_digest=header.get("generator_digest", ""),
        format_version=version,
    )
    if expected_digest is not None and ckpt.config_digest != expected_digest:
        raise CheckpointError(
            f"{path} was trained for system digest {ckpt.config_digest[:12]}, "
            f"current system is {expected_digest[:12]}"
        )
    return ckpt
