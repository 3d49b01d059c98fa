"""Frozen linear source forecasters with analytic forward and VJP.

All kinds are channel-independent affine maps from the look-back window to
the horizon, so the vector-Jacobian product is exact and input-independent.
Models are frozen after fitting: nothing in the adaptation engine mutates
their weights. Neural backbones are out of scope; the (forward, vjp) pair is
the extension point for wiring one in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import TimeSeriesDataset, count_rolling_origins, make_rolling_batches
from .optim import AdamParams, AdamState, adam_step

__all__ = [
    "ForecasterModel",
    "fit_ols",
    "fit_dlinear",
    "make_naive",
    "moving_average_matrix",
    "save_forecaster",
    "load_forecaster",
    "FORECASTER_KINDS",
]

FORECASTER_KINDS = ("ols", "dlinear", "naive")
FORMAT_VERSION = 1


@dataclass
class ForecasterModel:
    """A frozen forecaster: kind, shapes, and kind-specific weight arrays.

    Weight layouts
    --------------
    ols:     weight [C, L, H], bias [C, H]
    dlinear: trend_weight/resid_weight [C, L, H], trend_bias/resid_bias [C, H],
             plus the odd moving-average ``kernel``
    naive:   no weights (persistence of the last look-back value)
    """

    kind: str
    lookback: int
    horizon: int
    n_channels: int
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    kernel: int | None = None
    train_mse: float | None = None
    val_mse: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in FORECASTER_KINDS:
            raise ValueError(f"unknown forecaster kind {self.kind!r}")
        if self.kind == "dlinear" and (self.kernel is None or self.kernel % 2 == 0):
            raise ValueError("dlinear requires an odd moving-average kernel")

    def _check_inputs(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 3 or inputs.shape[1:] != (self.lookback, self.n_channels):
            raise ValueError(
                f"inputs must be [B x {self.lookback} x {self.n_channels}], got {inputs.shape}"
            )
        return inputs

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        """Predict [B x H x C] from look-back windows [B x L x C]."""
        inputs = self._check_inputs(inputs)
        if self.kind == "naive":
            return np.repeat(inputs[:, -1:, :], self.horizon, axis=1)
        if self.kind == "ols":
            w, b = self.weights["weight"], self.weights["bias"]
            return np.einsum("blc,clh->bhc", inputs, w) + b.T[None]
        trend_op = moving_average_matrix(self.lookback, self.kernel)
        trend = np.einsum("ts,bsc->btc", trend_op, inputs)
        resid = inputs - trend
        out = np.einsum("blc,clh->bhc", trend, self.weights["trend_weight"])
        out += np.einsum("blc,clh->bhc", resid, self.weights["resid_weight"])
        out += self.weights["trend_bias"].T[None] + self.weights["resid_bias"].T[None]
        return out

    def vjp(self, inputs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """d<forward(inputs), grad_out>/d inputs, shape [B x L x C]."""
        inputs = self._check_inputs(inputs)
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != (inputs.shape[0], self.horizon, self.n_channels):
            raise ValueError(
                f"grad_out must be [B x {self.horizon} x {self.n_channels}], got {grad_out.shape}"
            )
        if self.kind == "naive":
            grad_in = np.zeros_like(inputs)
            grad_in[:, -1, :] = grad_out.sum(axis=1)
            return grad_in
        if self.kind == "ols":
            return np.einsum("bhc,clh->blc", grad_out, self.weights["weight"])
        trend_op = moving_average_matrix(self.lookback, self.kernel)
        g_trend = np.einsum("bhc,clh->blc", grad_out, self.weights["trend_weight"])
        g_resid = np.einsum("bhc,clh->blc", grad_out, self.weights["resid_weight"])
        # trend = M x, resid = (I - M) x
        return g_resid + np.einsum("ts,btc->bsc", trend_op, g_trend - g_resid)

    def param_count(self) -> int:
        return int(sum(w.size for w in self.weights.values()))


def moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """Centered moving average with edge-replicated padding as a [L x L] operator."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    half = kernel // 2
    op = np.zeros((length, length))
    for t in range(length):
        for offset in range(-half, half + 1):
            s = min(max(t + offset, 0), length - 1)  # edge replication
            op[t, s] += 1.0 / kernel
    return op


def _train_windows(ds: TimeSeriesDataset, lookback: int, horizon: int):
    n = count_rolling_origins(ds, "train", lookback, horizon)
    if n < 1:
        raise ValueError(
            f"train region yields no (input, target) pairs for L={lookback}, H={horizon}"
        )
    (batch,) = make_rolling_batches(ds, "train", lookback, horizon, [n])
    return batch.inputs, batch.targets


def fit_ols(
    ds: TimeSeriesDataset, lookback: int, horizon: int, ridge: float = 1e-4
) -> ForecasterModel:
    """Per-channel closed-form ridge regression from look-back to horizon.

    The intercept is not regularized (centered solve), so under heavy ridge
    predictions shrink toward the per-step target mean.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    inputs, targets = _train_windows(ds, lookback, horizon)
    n_channels = ds.n_channels
    weight = np.zeros((n_channels, lookback, horizon))
    bias = np.zeros((n_channels, horizon))
    for c in range(n_channels):
        x = inputs[:, :, c]
        y = targets[:, :, c]
        x_mean = x.mean(axis=0)
        y_mean = y.mean(axis=0)
        xc = x - x_mean
        gram = xc.T @ xc + ridge * np.eye(lookback)
        # LU solve does not reliably raise on numerically rank-deficient Grams
        if ridge == 0 and np.linalg.matrix_rank(gram) < lookback:
            raise np.linalg.LinAlgError(
                f"normal matrix is singular for channel {ds.channel_names[c]!r}; "
                f"use ridge > 0"
            )
        weight[c] = np.linalg.solve(gram, xc.T @ (y - y_mean))
        bias[c] = y_mean - x_mean @ weight[c]
    model = ForecasterModel(
        kind="ols",
        lookback=lookback,
        horizon=horizon,
        n_channels=n_channels,
        weights={"weight": weight, "bias": bias},
    )
    model.train_mse = float(np.mean((model.forward(inputs) - targets) ** 2))
    return model


def _val_mse(model: ForecasterModel, ds: TimeSeriesDataset) -> float | None:
    n = count_rolling_origins(ds, "val", model.lookback, model.horizon)
    if n < 1:
        return None
    (batch,) = make_rolling_batches(ds, "val", model.lookback, model.horizon, [n])
    return float(np.mean((model.forward(batch.inputs) - batch.targets) ** 2))


def fit_dlinear(
    ds: TimeSeriesDataset,
    lookback: int,
    horizon: int,
    kernel: int = 25,
    epochs: int = 10,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
) -> ForecasterModel:
    """Trend/remainder decomposition with two per-channel linear maps.

    Trained with mini-batch Adam on train windows; the parameters with the
    best validation MSE are kept (train MSE when the validation region is too
    short for a single window). The model is affine, so zero init has no
    symmetry problem.
    """
    inputs, targets = _train_windows(ds, lookback, horizon)
    n_channels = ds.n_channels
    model = ForecasterModel(
        kind="dlinear",
        lookback=lookback,
        horizon=horizon,
        n_channels=n_channels,
        kernel=kernel,
        weights={
            "trend_weight": np.zeros((n_channels, lookback, horizon)),
            "trend_bias": np.zeros((n_channels, horizon)),
            "resid_weight": np.zeros((n_channels, lookback, horizon)),
            "resid_bias": np.zeros((n_channels, horizon)),
        },
    )
    trend_op = moving_average_matrix(lookback, kernel)
    rng = np.random.default_rng(seed)
    opt_state = AdamState()
    hyper = AdamParams(lr=lr)
    n = inputs.shape[0]
    best = (np.inf, {k: w.copy() for k, w in model.weights.items()})
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            x, y = inputs[idx], targets[idx]
            trend = np.einsum("ts,bsc->btc", trend_op, x)
            resid = x - trend
            pred = (
                np.einsum("blc,clh->bhc", trend, model.weights["trend_weight"])
                + np.einsum("blc,clh->bhc", resid, model.weights["resid_weight"])
                + model.weights["trend_bias"].T[None]
                + model.weights["resid_bias"].T[None]
            )
            err = pred - y
            loss = float(np.mean(err**2))
            if not np.isfinite(loss):
                raise RuntimeError("dlinear training diverged (non-finite loss)")
            g = 2.0 * err / err.size
            grads = {
                "trend_weight": np.einsum("blc,bhc->clh", trend, g),
                "resid_weight": np.einsum("blc,bhc->clh", resid, g),
                "trend_bias": g.sum(axis=0).T,
                "resid_bias": g.sum(axis=0).T,
            }
            adam_step(model.weights, grads, opt_state, hyper)
        score = _val_mse(model, ds)
        if score is None:
            score = float(np.mean((model.forward(inputs) - targets) ** 2))
        if score < best[0]:
            best = (score, {k: w.copy() for k, w in model.weights.items()})
    model.weights = best[1]
    model.train_mse = float(np.mean((model.forward(inputs) - targets) ** 2))
    model.val_mse = _val_mse(model, ds)
    return model


def make_naive(lookback: int, horizon: int, n_channels: int) -> ForecasterModel:
    """Persistence forecast: every horizon step repeats the last look-back value."""
    return ForecasterModel(
        kind="naive", lookback=lookback, horizon=horizon, n_channels=n_channels
    )


def save_forecaster(model: ForecasterModel, path: str) -> None:
    blob = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "lookback": model.lookback,
        "horizon": model.horizon,
        "n_channels": model.n_channels,
        "kernel": model.kernel,
        "train_mse": model.train_mse,
        "val_mse": model.val_mse,
        "weights": {
            name: {"shape": list(w.shape), "data": w.reshape(-1).tolist()}
            for name, w in model.weights.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_forecaster(path: str) -> ForecasterModel:
    with open(path) as fh:
        blob = json.load(fh)
    version = blob.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported forecaster blob version {version!r}")
    weights = {
        name: np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        for name, spec in blob["weights"].items()
    }
    return ForecasterModel(
        kind=blob["kind"],
        lookback=blob["lookback"],
        horizon=blob["horizon"],
        n_channels=blob["n_channels"],
        weights=weights,
        kernel=blob.get("kernel"),
        train_mse=blob.get("train_mse"),
        val_mse=blob.get("val_mse"),
    )
