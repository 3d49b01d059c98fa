import numpy as np
import pytest

from freqcal.data import normalize_and_split
from freqcal.forecasters import (
    ForecasterModel,
    fit_dlinear,
    fit_ols,
    load_forecaster,
    make_naive,
    moving_average_matrix,
    save_forecaster,
)

from conftest import raw_dataset, sine_dataset
from oracles import grad_of_arrays


def random_model(kind, rng, lookback=5, horizon=3, n_channels=2):
    if kind == "naive":
        return make_naive(lookback, horizon, n_channels)
    weights = {
        "weight": rng.normal(size=(n_channels, lookback, horizon)),
        "bias": rng.normal(size=(n_channels, horizon)),
    }
    if kind == "ols":
        return ForecasterModel("ols", lookback, horizon, n_channels, weights)
    weights = {
        "trend_weight": rng.normal(size=(n_channels, lookback, horizon)),
        "trend_bias": rng.normal(size=(n_channels, horizon)),
        "resid_weight": rng.normal(size=(n_channels, lookback, horizon)),
        "resid_bias": rng.normal(size=(n_channels, horizon)),
    }
    return ForecasterModel("dlinear", lookback, horizon, n_channels, weights, kernel=3)


def test_ols_recovers_exact_linear_process():
    # noiseless linear recurrence: every target is an exact linear map of the
    # look-back, so ridge OLS must reproduce train targets almost exactly
    ds = sine_dataset(600, period=12, n_channels=2)
    model = fit_ols(ds, lookback=8, horizon=4)
    assert model.train_mse < 1e-8


def test_ols_single_pair_heavy_ridge_shrinks_to_bias():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(40, 2))
    lookback, horizon = 4, 3
    # train region sized for exactly one window
    ds = raw_dataset(values, train_end=lookback + horizon, val_end=20)
    model = fit_ols(ds, lookback, horizon, ridge=1e9)
    assert np.all(np.abs(model.weights["weight"]) < 1e-6)
    target = values[lookback : lookback + horizon]
    pred = model.forward(values[None, :lookback, :])
    np.testing.assert_allclose(pred[0], target, atol=1e-5)


def test_ols_zero_ridge_singular_advises_ridge():
    # duplicated look-back columns make the normal matrix singular
    t = np.arange(200)
    values = np.stack([np.sin(2 * np.pi * t / 8)], axis=1)
    ds = raw_dataset(values, train_end=140, val_end=160)
    with pytest.raises(np.linalg.LinAlgError, match="ridge > 0"):
        fit_ols(ds, lookback=16, horizon=2, ridge=0.0)


def test_train_region_too_short():
    ds = raw_dataset(np.random.default_rng(1).normal(size=(30, 1)), train_end=5, val_end=20)
    with pytest.raises(ValueError, match="no \\(input, target\\) pairs"):
        fit_ols(ds, lookback=4, horizon=4)


def test_naive_persistence_forward():
    model = make_naive(4, 3, 2)
    x = np.random.default_rng(2).normal(size=(5, 4, 2))
    pred = model.forward(x)
    for h in range(3):
        np.testing.assert_array_equal(pred[:, h, :], x[:, -1, :])


def test_ols_zero_input_broadcasts_bias():
    rng = np.random.default_rng(3)
    model = random_model("ols", rng)
    pred = model.forward(np.zeros((4, 5, 2)))
    np.testing.assert_allclose(pred, np.broadcast_to(model.weights["bias"].T, (4, 3, 2)))


def test_forward_matches_dense_oracle():
    rng = np.random.default_rng(4)
    model = random_model("ols", rng)
    x = rng.normal(size=(3, 5, 2))
    pred = model.forward(x)
    for b in range(3):
        for c in range(2):
            expected = x[b, :, c] @ model.weights["weight"][c] + model.weights["bias"][c]
            np.testing.assert_allclose(pred[b, :, c], expected, atol=1e-12)


@pytest.mark.parametrize("kind", ["ols", "dlinear", "naive"])
def test_vjp_matches_finite_differences(kind):
    rng = np.random.default_rng(5)
    model = random_model(kind, rng)
    for probe in range(20):
        x = rng.normal(size=(2, 5, 2))
        g = rng.normal(size=(2, 3, 2))
        analytic = model.vjp(x, g)

        def loss():
            return float(np.sum(model.forward(x) * g))

        fd = grad_of_arrays(loss, {"x": x}, eps=1e-6)["x"]
        np.testing.assert_allclose(analytic, fd, rtol=1e-6, atol=1e-8)


def test_vjp_zero_grad_out():
    model = random_model("dlinear", np.random.default_rng(6))
    x = np.random.default_rng(7).normal(size=(2, 5, 2))
    assert np.all(model.vjp(x, np.zeros((2, 3, 2))) == 0)


def test_naive_vjp_accumulates_on_last_step():
    model = make_naive(4, 3, 2)
    g = np.random.default_rng(8).normal(size=(2, 3, 2))
    grad_in = model.vjp(np.zeros((2, 4, 2)), g)
    assert np.all(grad_in[:, :-1, :] == 0)
    np.testing.assert_allclose(grad_in[:, -1, :], g.sum(axis=1))


@pytest.mark.parametrize("kind", ["ols", "dlinear"])
def test_affine_linearity(kind):
    rng = np.random.default_rng(9)
    model = random_model(kind, rng)
    x, y = rng.normal(size=(2, 4, 5, 2))
    a, b = rng.normal(size=2)
    lhs = model.forward(a * x + b * y)
    rhs = a * model.forward(x) + b * model.forward(y) - (a + b - 1) * model.forward(np.zeros_like(x))
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@pytest.mark.parametrize("kind", ["ols", "dlinear", "naive"])
def test_channel_independence(kind):
    rng = np.random.default_rng(10)
    model = random_model(kind, rng)
    x = rng.normal(size=(3, 5, 2))
    bumped = x.copy()
    bumped[:, :, 0] += rng.normal(size=(3, 5))
    base, moved = model.forward(x), model.forward(bumped)
    assert np.any(base[:, :, 0] != moved[:, :, 0])
    np.testing.assert_array_equal(base[:, :, 1], moved[:, :, 1])


def test_moving_average_matrix_rows_sum_to_one():
    op = moving_average_matrix(10, 5)
    np.testing.assert_allclose(op.sum(axis=1), np.ones(10), atol=1e-12)
    # interior row is the plain centered window
    np.testing.assert_allclose(op[5, 3:8], np.full(5, 0.2), atol=1e-12)


def test_dlinear_kernel_one_matches_ols_solution():
    # kernel 1 collapses the decomposition (trend = input, remainder = 0), so
    # gradient training should approach the closed-form single-map solution
    ds = sine_dataset(500, period=8)
    ols = fit_ols(ds, lookback=4, horizon=2, ridge=1e-8)
    dl = fit_dlinear(ds, lookback=4, horizon=2, kernel=1, epochs=150, lr=0.02, batch_size=64)
    n = ds.val_end - 4 - 2 + 1
    x = np.stack([ds.values[o - 4 : o] for o in range(4, ds.val_end - 1)])
    diff = dl.forward(x) - ols.forward(x)
    assert float(np.mean(diff**2)) < 1e-3
    assert n > 0


def test_dlinear_ramp_goes_through_trend_branch():
    t = np.arange(300, dtype=np.float64)
    ds = raw_dataset((t / 100.0 - 1.5), train_end=210, val_end=240)
    model = fit_dlinear(ds, lookback=12, horizon=4, kernel=5, epochs=60, lr=0.01, batch_size=32)
    x = np.stack([ds.values[o - 12 : o] for o in range(12, 200)])
    op = moving_average_matrix(12, 5)
    trend = np.einsum("ts,bsc->btc", op, x)
    resid = x - trend
    trend_out = np.einsum("blc,clh->bhc", trend, model.weights["trend_weight"])
    resid_out = np.einsum("blc,clh->bhc", resid, model.weights["resid_weight"])
    assert np.linalg.norm(resid_out) < 0.1 * np.linalg.norm(trend_out + resid_out)


def test_dlinear_preserves_constant_series():
    ds = raw_dataset(np.full(60, 3.0), train_end=42, val_end=48)
    model = fit_dlinear(ds, lookback=4, horizon=3, kernel=3, epochs=60, lr=0.02, batch_size=8)
    pred = model.forward(np.full((1, 4, 1), 3.0))
    np.testing.assert_allclose(pred, np.full((1, 3, 1), 3.0), atol=1e-3)


def test_dlinear_even_kernel_rejected():
    ds = sine_dataset(200, period=8)
    with pytest.raises(ValueError, match="odd"):
        fit_dlinear(ds, lookback=4, horizon=2, kernel=4, epochs=1)


def test_save_load_round_trip(tmp_path):
    ds = sine_dataset(300, period=10, n_channels=2)
    model = fit_ols(ds, lookback=6, horizon=3)
    path = tmp_path / "model.json"
    save_forecaster(model, str(path))
    loaded = load_forecaster(str(path))
    x = np.random.default_rng(11).normal(size=(4, 6, 2))
    np.testing.assert_array_equal(loaded.forward(x), model.forward(x))
    assert loaded.kind == "ols" and loaded.train_mse == model.train_mse


def test_load_rejects_unknown_version(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format_version": 99, "kind": "naive"}')
    with pytest.raises(ValueError, match="version"):
        load_forecaster(str(path))
