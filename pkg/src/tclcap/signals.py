"""Grid-signal ingestion: CSV loading, resampling, and synthetic generation.

Real regulation data is not redistributed with the package; the default
source is a seeded band-limited noise generator whose correlation structure
mimics a fast regulation component riding on a slower drift.
"""

from __future__ import annotations

import csv
from datetime import datetime

import numpy as np


class IngestError(ValueError):
    """The signal source cannot be turned into a usable series."""


def synthetic_signal(n_steps: int, t_s_min: float, seed: int,
                     amplitude_kw: float, corr_minutes=(4.0, 20.0, 120.0),
                     mix=(0.4, 0.35, 0.25), ramp_minutes: float = 30.0) -> np.ndarray:
    """Regulation-style band-limited noise scaled to a peak amplitude.

    A sum of order-one autoregressions spanning fast jitter to slow drift,
    mean-removed, then ramped in from zero: a deviation request always
    starts at zero because the fleet starts on its baseline.  The result is
    scaled so the largest magnitude equals ``amplitude_kw``.  Deterministic
    in the seed.
    """
    if n_steps < 1:
        raise IngestError("signal length must be at least 1")
    if len(corr_minutes) != len(mix):
        raise IngestError("corr_minutes and mix must have equal length")
    rng = np.random.default_rng(seed)
    total = np.zeros(n_steps)
    for corr, weight in zip(corr_minutes, mix):
        phi = float(np.exp(-t_s_min / corr))
        innov = rng.standard_normal(n_steps + 200) * np.sqrt(1.0 - phi ** 2)
        x = np.empty(n_steps + 200)
        x[0] = rng.standard_normal()
        for k in range(1, x.size):
            x[k] = phi * x[k - 1] + innov[k]
        total += weight * x[200:]
    total -= total.mean()
    ramp_steps = max(int(round(ramp_minutes / t_s_min)), 1)
    window = np.minimum(np.arange(n_steps) / ramp_steps, 1.0)
    total *= window
    peak = np.abs(total).max()
    if peak == 0.0:
        return total
    return total * (amplitude_kw / peak)


def _parse_timestamp(raw: str, index: int) -> float:
    """Timestamp column: minutes as a number, or an ISO 8601 datetime."""
    try:
        return float(raw)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(raw).timestamp() / 60.0
    except ValueError as exc:
        raise IngestError(f"unparseable timestamp {raw!r} on row {index}") from exc


def load_signal_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``timestamp, mw`` file; returns (minutes, kW)."""
    times, values = [], []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip().lower() for h in next(reader, [])]
            if header[:2] != ["timestamp", "mw"]:
                raise IngestError(f"expected columns timestamp,mw in {path}")
            for i, row in enumerate(reader):
                if not row or not row[0].strip():
                    continue
                times.append(_parse_timestamp(row[0].strip(), i))
                values.append(float(row[1]) * 1000.0)
    except OSError as exc:
        raise IngestError(f"cannot read signal file {path}: {exc}") from exc
    if not times:
        raise IngestError(f"signal file {path} holds no samples")
    t = np.asarray(times)
    if np.any(np.diff(t) <= 0):
        raise IngestError("timestamps must be strictly increasing")
    return t, np.asarray(values)


def resample_linear(times_min: np.ndarray, values: np.ndarray,
                    t_s_min: float) -> np.ndarray:
    """Linear interpolation onto a uniform grid from the first timestamp."""
    span = times_min[-1] - times_min[0]
    n_out = int(np.floor(span / t_s_min + 1e-9)) + 1
    grid = times_min[0] + t_s_min * np.arange(n_out)
    return np.interp(grid, times_min, values)


def ingest_signal(spec: dict, n_steps: int, t_s_min: float,
                  p_agg_kw: float) -> np.ndarray:
    """Produce the requested-deviation series (kW) from a source description.

    Synthetic sources scale their peak to ``amplitude_frac * p_agg_kw``.
    File sources are resampled to the run's sample time, optionally scaled
    and mean-removed, and must cover at least ``n_steps`` samples.
    """
    source = spec.get("source", "synthetic")
    if source == "synthetic":
        return synthetic_signal(
            n_steps, t_s_min,
            seed=int(spec.get("seed", 0)),
            amplitude_kw=float(spec.get("amplitude_frac", 0.25)) * p_agg_kw,
            corr_minutes=tuple(spec.get("corr_minutes", (4.0, 20.0, 120.0))),
            mix=tuple(spec.get("mix", (0.4, 0.35, 0.25))),
            ramp_minutes=float(spec.get("ramp_minutes", 30.0)),
        )
    if source == "file":
        path = spec.get("path")
        if not path:
            raise IngestError("file source requires a path")
        times, values = load_signal_csv(path)
        series = resample_linear(times, values, t_s_min)
        series = series * float(spec.get("scale", 1.0))
        if spec.get("force_zero_mean", False):
            series = series - series.mean()
        if series.size < n_steps:
            raise IngestError(
                f"signal covers {series.size} samples, run needs {n_steps}")
        return series[:n_steps]
    raise IngestError(f"unknown signal source: {source}")
