import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, TextIO, Union

import pandas as pd

from src.models.errors import DomainError
from src.models.index import ComplexityDims, ComplexityMethod

RESULT_COLUMNS = ["method", "channel", "snr_db", "trials", "errors", "error_prob", "ci95"]
COMPLEXITY_COLUMNS = ["method", "N", "N_s", "N_g", "L", "cm"]
CONFIDENCE_Z = 1.96


@dataclass
class EvalRow:
    method: str
    channel: str
    snr_db: float
    trials: int
    errors: int

    @property
    def error_prob(self) -> float:
        return self.errors / self.trials

    @property
    def ci95(self) -> float:
        """Normal-approximation 95% half-width of the error probability."""
        p = self.error_prob
        return CONFIDENCE_Z * math.sqrt(p * (1 - p) / self.trials)


@dataclass
class EvalResult:
    rows: List[EvalRow] = field(default_factory=list)

    def extend(self, other: "EvalResult") -> "EvalResult":
        self.rows.extend(other.rows)
        return self

    def row(self, method: str, snr_db: float, channel: Optional[str] = None) -> EvalRow:
        for row in self.rows:
            if row.method == method and row.snr_db == snr_db and channel in (None, row.channel):
                return row
        raise KeyError(f"no result for method={method} snr_db={snr_db} channel={channel}")

    def to_frame(self) -> pd.DataFrame:
        """Rows with fixed-format text columns, ready for a byte-stable CSV."""
        return pd.DataFrame(
            [
                {
                    "method": row.method,
                    "channel": row.channel,
                    "snr_db": f"{row.snr_db:.2f}",
                    "trials": str(row.trials),
                    "errors": str(row.errors),
                    "error_prob": f"{row.error_prob:.6f}",
                    "ci95": f"{row.ci95:.6f}",
                }
                for row in self.rows
            ],
            columns=RESULT_COLUMNS,
        )


def write_results_csv(result: EvalResult, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.to_frame().to_csv(path, index=False, lineterminator="\n")
    return path


def _half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def complexity_cm(method: Union[ComplexityMethod, str], dims: ComplexityDims) -> int:
    """Complex multiplications per timing estimate, rounded half-up."""
    try:
        method = ComplexityMethod(method)
    except ValueError:
        raise DomainError(f"unknown complexity method {method!r}")

    N, N_s, N_g, L = (Fraction(v) for v in (dims.N, dims.N_s, dims.N_g, dims.L))
    half, three_quarters = Fraction(1, 2), Fraction(3, 4)

    if method == ComplexityMethod.JSANDCE:
        joint = sum(3 * l * N_s + l**3 + l**2 * N_s for l in range(1, dims.L + 1))
        cm = L * N * N_s + joint
    elif method == ComplexityMethod.ELM:
        cm = 16 * N_s**2 + 4 * N_s + 3 * half * N - 4
    elif method == ComplexityMethod.DNN:
        cm = three_quarters * N_s**2 + N * N_s + 2 * N_s + N - 2
    elif method == ComplexityMethod.PROPOSED:
        cm = 3 * half * N_s**2 + 3 * N_s + N - 2
    elif method == ComplexityMethod.NN_ONLY:
        cm = half * N_s**2 + N_s * N_g
    else:
        cm = N_s * N
    return _half_up(Fraction(cm))


def complexity_report(dims: ComplexityDims) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "method": method.value,
                "N": dims.N,
                "N_s": dims.N_s,
                "N_g": dims.N_g,
                "L": dims.L,
                "cm": complexity_cm(method, dims),
            }
            for method in ComplexityMethod
        ],
        columns=COMPLEXITY_COLUMNS,
    )


def write_complexity_csv(report: pd.DataFrame, target: Union[Path, TextIO]) -> None:
    if isinstance(target, (str, Path)):
        Path(target).parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(target, index=False, lineterminator="\n")

