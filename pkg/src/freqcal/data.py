"""Dataset loading, chronological splits, normalization, and rolling batches.

A loaded dataset is stored already z-normalized with statistics computed on
the train region only. Evaluation downstream happens in this normalized space
(train-statistic z-normalization is the conventional benchmark setup; the
results are sensitive to this choice, see README).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "TimeSeriesDataset",
    "RollingBatch",
    "normalize_and_split",
    "load_csv",
    "region_bounds",
    "count_rolling_origins",
    "plan_batch_sizes",
    "make_rolling_batches",
]

DEFAULT_RATIOS = (0.7, 0.1, 0.2)
REGIONS = ("train", "val", "test")


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Normalized multivariate series with chronological split boundaries.

    ``values`` is [T x C] in normalized units; ``mean``/``std`` are the raw
    per-channel train-region statistics needed to denormalize.
    """

    values: np.ndarray
    channel_names: tuple[str, ...]
    train_end: int
    val_end: int
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("values must be a [T x C] matrix")
        n_steps, n_channels = values.shape
        if not (0 < self.train_end < self.val_end < n_steps):
            raise ValueError(
                f"split bounds must satisfy 0 < train_end < val_end < T, got "
                f"({self.train_end}, {self.val_end}) for T={n_steps}"
            )
        if len(self.channel_names) != n_channels:
            raise ValueError("channel_names length must match the channel count")
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (n_channels,) or std.shape != (n_channels,):
            raise ValueError("norm stats must be per-channel vectors")
        if np.any(std <= 0):
            raise ValueError("normalization std must be positive for every channel")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def split_bounds(self) -> tuple[int, int]:
        return (self.train_end, self.val_end)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        """Map normalized values back to raw units (broadcasts over leading axes)."""
        return np.asarray(x) * self.std + self.mean

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) / self.std


def normalize_and_split(
    raw_values: np.ndarray,
    channel_names: tuple[str, ...] | list[str] | None = None,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
) -> TimeSeriesDataset:
    """Build a dataset from raw values: floor-ratio splits, train-stat z-norm."""
    raw = np.asarray(raw_values, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("raw values must be a [T x C] matrix")
    n_steps, n_channels = raw.shape
    if channel_names is None:
        channel_names = tuple(f"ch{i}" for i in range(n_channels))
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    # epsilon guards the floor against float dust when the product is an
    # intended integer (e.g. 0.8 * 17420)
    train_end = int(np.floor(ratios[0] * n_steps + 1e-9))
    val_end = int(np.floor((ratios[0] + ratios[1]) * n_steps + 1e-9))
    if not (0 < train_end < val_end < n_steps):
        raise ValueError(
            f"series of length {n_steps} is too short for ratios {ratios} "
            f"(computed bounds {train_end}, {val_end})"
        )
    train = raw[:train_end]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    flat = np.flatnonzero(std <= 0)
    if flat.size:
        names = ", ".join(str(channel_names[i]) for i in flat)
        raise ValueError(f"constant channel in train region: {names}")
    return TimeSeriesDataset(
        values=(raw - mean) / std,
        channel_names=tuple(str(c) for c in channel_names),
        train_end=train_end,
        val_end=val_end,
        mean=mean,
        std=std,
    )


def _check_ordered(stamps: pd.Series, column: str) -> None:
    parsed = pd.to_datetime(stamps, errors="coerce", format="mixed")
    if not parsed.isna().any():
        ordered = parsed.is_monotonic_increasing
    else:
        numeric = pd.to_numeric(stamps, errors="coerce")
        if not numeric.isna().any():
            ordered = numeric.is_monotonic_increasing
        else:
            ordered = stamps.astype(str).is_monotonic_increasing
    if not ordered:
        raise ValueError(f"timestamp column '{column}' is not in ascending order")


def load_csv(
    path: str,
    timestamp_column: str | None = None,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
) -> TimeSeriesDataset:
    """Load a CSV with a timestamp column plus numeric channels.

    The timestamp column (first column by default) is only checked for
    ordering. Non-numeric or non-finite cells are reported with their row
    index; constant channels and too-short series are rejected.
    """
    frame = pd.read_csv(path, dtype=str)
    if frame.shape[1] < 2:
        raise ValueError(f"{path}: need a timestamp column plus at least one channel")
    ts_col = timestamp_column if timestamp_column is not None else frame.columns[0]
    if ts_col not in frame.columns:
        raise ValueError(f"{path}: no timestamp column named '{ts_col}'")
    _check_ordered(frame[ts_col], ts_col)

    channels = [c for c in frame.columns if c != ts_col]
    columns = []
    for name in channels:
        numeric = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(numeric))
        if bad.size:
            row = int(bad[0])
            raise ValueError(
                f"{path}: column '{name}' has a non-finite or unparseable value "
                f"at data row {row} ({frame[name].iloc[row]!r})"
            )
        columns.append(numeric)
    raw = np.stack(columns, axis=1)
    return normalize_and_split(raw, tuple(channels), ratios=ratios)


@dataclass(frozen=True)
class RollingBatch:
    """One mini-batch of rolling windows with global time anchors.

    ``anchor`` is the global index immediately preceding the first forecasted
    target; sample j (1-based) has its first target at ``anchor + j``. The
    inputs of consecutive batches tile the origins, so
    ``next.anchor == anchor + size``.
    """

    index: int
    anchor: int
    inputs: np.ndarray   # [B x L x C]
    targets: np.ndarray  # [B x H x C]

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def lookback(self) -> int:
        return self.inputs.shape[1]

    @property
    def horizon(self) -> int:
        return self.targets.shape[1]

    @property
    def origins(self) -> np.ndarray:
        """Global index of the first target of each sample."""
        return self.anchor + 1 + np.arange(self.size)

    @property
    def target_span(self) -> tuple[int, int]:
        """Inclusive global index range covered by the union of all targets."""
        return (self.anchor + 1, self.anchor + self.size + self.horizon - 1)

    @property
    def last_target_index(self) -> int:
        return self.target_span[1]


def region_bounds(ds: TimeSeriesDataset, region: str) -> tuple[int, int]:
    if region == "train":
        return (0, ds.train_end)
    if region == "val":
        return (ds.train_end, ds.val_end)
    if region == "test":
        return (ds.val_end, ds.n_steps)
    raise ValueError(f"unknown region {region!r}, expected one of {REGIONS}")


def count_rolling_origins(ds: TimeSeriesDataset, region: str, lookback: int, horizon: int) -> int:
    """Number of valid rolling origins in a region.

    An origin is the first-target index; its look-back may reach back before
    the region start (standard rolling practice) but never before the series
    start, and the full target must stay inside the region's end bound (the
    series end for the test region).
    """
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be >= 1")
    start, stop = region_bounds(ds, region)
    first = max(start, lookback)
    last = stop - horizon  # inclusive
    return max(0, last - first + 1)


def plan_batch_sizes(n_origins: int, nominal: int) -> list[int]:
    """Tile ``n_origins`` into consecutive batches of ``nominal`` (last may be short)."""
    if nominal < 1:
        raise ValueError("nominal batch size must be >= 1")
    if n_origins < 0:
        raise ValueError("origin count must be >= 0")
    sizes = [nominal] * (n_origins // nominal)
    if n_origins % nominal:
        sizes.append(n_origins % nominal)
    return sizes


def make_rolling_batches(
    ds: TimeSeriesDataset,
    region: str,
    lookback: int,
    horizon: int,
    batch_sizes: list[int] | tuple[int, ...],
) -> list[RollingBatch]:
    """Group all rolling origins of a region into consecutive mini-batches."""
    n_origins = count_rolling_origins(ds, region, lookback, horizon)
    if sum(batch_sizes) != n_origins:
        raise ValueError(
            f"batch sizes sum to {sum(batch_sizes)} but region '{region}' has "
            f"{n_origins} rolling origins"
        )
    if any(b < 1 for b in batch_sizes):
        raise ValueError("every batch size must be >= 1")
    start, _ = region_bounds(ds, region)
    first_origin = max(start, lookback)
    batches = []
    origin = first_origin
    for k, size in enumerate(batch_sizes):
        origins = origin + np.arange(size)
        in_idx = origins[:, None] + np.arange(-lookback, 0)[None, :]
        tg_idx = origins[:, None] + np.arange(horizon)[None, :]
        batches.append(
            RollingBatch(
                index=k,
                anchor=origin - 1,
                inputs=ds.values[in_idx],
                targets=ds.values[tg_idx],
            )
        )
        origin += size
    return batches
