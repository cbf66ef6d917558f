"""Append-only per-iteration metrics CSV."""

from __future__ import annotations

import csv
import math
from pathlib import Path

METRIC_FIELDS = (
    "iteration", "wall_seconds",
    "blind_surrogate", "blind_value_loss", "blind_entropy", "blind_kl", "blind_lr", "blind_grad_norm",
    "percep_surrogate", "percep_value_loss", "percep_entropy", "percep_kl", "percep_lr", "percep_grad_norm",
    "mean_return", "mean_episode_length", "mean_P", "mean_I", "familiar_P",
    "vae_loss", "heldout_recon", "roa_loss", "mean_difficulty",
)

METRICS_FILE = "metrics.csv"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def log_metrics(run_dir: str | Path, record: dict, name: str = METRICS_FILE) -> None:
    """Append one row; the header is written only when the file is new."""
    path = Path(run_dir) / name
    unknown = set(record) - set(METRIC_FIELDS)
    if unknown:
        raise KeyError(f"unknown metric columns {sorted(unknown)}")
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(METRIC_FIELDS)
        writer.writerow([_fmt(record.get(k)) for k in METRIC_FIELDS])
        fh.flush()


def read_metrics(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (float(v) if v != "" else math.nan) for k, v in row.items()} for row in rows]
