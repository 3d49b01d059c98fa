import numpy as np
import pytest

from freqcal.data import TimeSeriesDataset, normalize_and_split


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def raw_dataset(values: np.ndarray, train_end: int, val_end: int) -> TimeSeriesDataset:
    """Dataset wrapper with identity stats: values are taken as already normalized."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n_channels = values.shape[1]
    return TimeSeriesDataset(
        values=values,
        channel_names=tuple(f"ch{i}" for i in range(n_channels)),
        train_end=train_end,
        val_end=val_end,
        mean=np.zeros(n_channels),
        std=np.ones(n_channels),
    )


def sine_dataset(n_steps: int, period: int, n_channels: int = 1, ratios=(0.7, 0.1, 0.2)):
    t = np.arange(n_steps)
    cols = [np.sin(2 * np.pi * (t / period + 0.13 * c)) for c in range(n_channels)]
    return normalize_and_split(np.stack(cols, axis=1), ratios=ratios)


def write_csv(path, values, timestamps=None, header=None):
    values = np.asarray(values, dtype=np.float64)
    n_steps, n_channels = values.shape
    if timestamps is None:
        timestamps = [f"2020-01-01 {i // 60:02d}:{i % 60:02d}:00" for i in range(n_steps)]
    if header is None:
        header = ["date"] + [f"ch{i}" for i in range(n_channels)]
    lines = [",".join(header)]
    for i in range(n_steps):
        lines.append(",".join([str(timestamps[i])] + [repr(float(v)) for v in values[i]]))
    path.write_text("\n".join(lines) + "\n")
    return path
