"""Render error-probability curves from result CSVs written by `eval`/`sweep`.

Usage: python evaluation/scripts/plot_error_probability.py runs/eval_desk_scale/results.csv [...]
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

if len(sys.argv) < 2:
    sys.exit(__doc__)

for csv_path in map(Path, sys.argv[1:]):
    results = pd.read_csv(csv_path)
    channels = sorted(results["channel"].unique())

    fig, axes = plt.subplots(1, len(channels), figsize=(5 * len(channels), 4), squeeze=False)
    for ax, channel in zip(axes[0], channels):
        for method, rows in results[results["channel"] == channel].groupby("method"):
            rows = rows.sort_values("snr_db")
            ax.errorbar(
                rows["snr_db"],
                rows["error_prob"],
                yerr=rows["ci95"],
                marker="o",
                capsize=3,
                label=method,
            )
        ax.set_yscale("log")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("error probability of TS")
        ax.set_title(channel)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()

    output_path = csv_path.with_suffix(".png")
    fig.tight_layout()
    fig.savefig(output_path, dpi=150)
    plt.close(fig)
    print(f"Saved {output_path}")
