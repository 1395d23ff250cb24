import hashlib
import json
from typing import Any

import numpy as np
from pydantic import BaseModel


def derive_rng(master_seed: int, *indices: int) -> np.random.Generator:
    """Independent stream for one (master_seed, indices...) coordinate.

    Streams for different index tuples never overlap, so per-sample and
    per-trial work can be scheduled in any order on any number of workers.
    """
    entropy = [int(master_seed)] + [int(i) for i in indices]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def complex_gaussian(rng: np.random.Generator, size: int, power: float) -> np.ndarray:
    """Zero-mean circular complex Gaussian samples with E|z|^2 = power."""
    scale = np.sqrt(power / 2.0)
    samples = rng.standard_normal((size, 2))
    return scale * (samples[:, 0] + 1j * samples[:, 1])


def canonical_json(document: Any) -> str:
    if isinstance(document, BaseModel):
        document = document.model_dump(mode="json")
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def config_digest(document: Any) -> str:
    return hashlib.sha256(canonical_json(document).encode("utf-8")).hexdigest()


def sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()
