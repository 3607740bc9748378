import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sobolev_inr.core_math import Rng
from sobolev_inr.network import DualBatch, MlpParams, init_params
from sobolev_inr.training import (
    AdamState,
    MetricRow,
    SampledSignal,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    default_model_factory,
    read_metrics_csv,
    sobolev_loss,
    train,
    value_loss,
    write_metrics_csv,
)


def sin3_dataset(n=100):
    x = np.linspace(-1, 1, n)[:, None]
    return SampledSignal(x, np.sin(3 * x), 3 * np.cos(3 * x), np.ones(n, dtype=bool))


def scalar_params(theta):
    return MlpParams([np.array([[theta]])], [np.zeros(1)], init_params(1, 1, 1, 1, "tanh", Rng(0)).activation, 1)


# --- loss ------------------------------------------------------------------------


def test_loss_hand_example():
    pred = DualBatch(np.array([[0.5], [1.0]]), np.zeros((2, 2, 1)))
    target_d = np.array([[[1.0], [0.0]], [[0.0], [0.0]]])  # D=2 x B=2 x C=1: sample 0 has [1, 0]
    terms = sobolev_loss(pred, np.array([[0.0], [1.0]]), target_d, 2.0)
    assert terms.loss == pytest.approx(1.125, abs=1e-15)
    assert terms.value_loss == 0.125 and terms.deriv_loss == 0.5


def test_loss_zero_when_exact():
    rng = np.random.default_rng(0)
    pred = DualBatch(rng.normal(size=(4, 3)), rng.normal(size=(2, 4, 3)))
    terms = sobolev_loss(pred, pred.primal.copy(), pred.tangents.copy(), 1.0)
    assert terms.loss == 0.0
    assert not terms.value_residual.any() and not terms.tangent_residual.any()


def test_lambda_zero_is_plain_mse():
    rng = np.random.default_rng(1)
    pred = DualBatch(rng.normal(size=(5, 2)), rng.normal(size=(2, 5, 2)))
    target = rng.normal(size=(5, 2))
    terms = sobolev_loss(pred, target, rng.normal(size=(2, 5, 2)), 0.0)
    assert terms.loss == pytest.approx(np.mean(np.sum((pred.primal - target) ** 2, axis=1)))
    assert value_loss(pred.primal, target).loss == terms.loss


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
def test_residuals_are_loss_gradients(seed, lam):
    rng = np.random.default_rng(seed)
    prim, tang = rng.normal(size=(3, 2)), rng.normal(size=(2, 3, 2))
    tv, td = rng.normal(size=(3, 2)), rng.normal(size=(2, 3, 2))
    terms = sobolev_loss(DualBatch(prim, tang), tv, td, lam)
    h = 1e-6
    for arr, res in ((prim, terms.value_residual), (tang, terms.tangent_residual)):
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + h
            up = sobolev_loss(DualBatch(prim, tang), tv, td, lam).loss
            arr[idx] = keep - h
            down = sobolev_loss(DualBatch(prim, tang), tv, td, lam).loss
            arr[idx] = keep
            fd[idx] = (up - down) / (2 * h)
        # the loss is quadratic, so central differences are exact up to rounding
        np.testing.assert_allclose(res, fd, rtol=1e-8, atol=1e-8)


def test_loss_shape_mismatch():
    pred = DualBatch(np.zeros((2, 1)), np.zeros((2, 2, 1)))
    with pytest.raises(ValueError, match="target shapes"):
        sobolev_loss(pred, np.zeros((3, 1)), np.zeros((2, 2, 1)), 1.0)


# --- Adam ------------------------------------------------------------------------


def test_adam_zero_gradient():
    p = scalar_params(0.7)
    adam_step(AdamState.zeros(p), p, scalar_params(0.0), 0.1)
    assert p.weights[0][0, 0] == 0.7


def test_adam_first_step_closed_form():
    p = scalar_params(0.0)
    adam_step(AdamState.zeros(p), p, scalar_params(2.0), 0.1)
    assert p.weights[0][0, 0] == pytest.approx(-0.1 * 2 / (2 + 1e-8), rel=1e-15)
    assert p.weights[0][0, 0] == pytest.approx(-0.099999999, abs=1e-9)


def test_adam_zero_lr():
    p = scalar_params(0.3)
    state = AdamState.zeros(p)
    for _ in range(3):
        adam_step(state, p, scalar_params(1.5), 0.0)
    assert p.weights[0][0, 0] == 0.3 and state.t == 3


# --- config and dataset -------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lam=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(activation="gelu")
    assert TrainConfig(use_positional_encoding=True, num_frequencies=5).encoding().out_dim(2) == 22
    assert TrainConfig().encoding() is None


def test_dataset_validation():
    x = np.zeros((4, 2))
    with pytest.raises(ValueError):
        SampledSignal(x, np.zeros((3, 1)), None, np.ones(4, bool))
    with pytest.raises(ValueError, match="D\\*C"):
        SampledSignal(x, np.zeros((4, 1)), np.zeros((4, 3)), np.ones(4, bool))
    with pytest.raises(ValueError, match="empty"):
        SampledSignal(x, np.zeros((4, 1)), None, np.zeros(4, bool))


def test_deriv_tangent_layout():
    derivs = np.arange(12.0).reshape(2, 6)  # N=2, D=2, C=3: [du_rgb | dv_rgb]
    ds = SampledSignal(np.zeros((2, 2)), np.zeros((2, 3)), derivs, np.ones(2, bool))
    t = ds.deriv_tangents()
    np.testing.assert_array_equal(t[0], [[0, 1, 2], [6, 7, 8]])
    np.testing.assert_array_equal(t[1], [[3, 4, 5], [9, 10, 11]])


# --- loop ----------------------------------------------------------------------------


def test_zero_iterations_returns_initial_params():
    cfg = TrainConfig(iterations=0, hidden_layers=1, width=8)
    ds = sin3_dataset()
    params, log = train(cfg, ds)
    ref = default_model_factory(cfg, 1, 1)(Rng(cfg.seed).spawn(0))
    assert log == []
    for a, b in zip(params.arrays(), ref.arrays()):
        assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("batch", [None, 16])
def test_train_deterministic(batch):
    cfg = TrainConfig(iterations=40, hidden_layers=2, width=8, batch_size=batch, learning_rate=1e-3, log_interval=10)
    runs = [train(cfg, sin3_dataset()) for _ in range(2)]
    for a, b in zip(runs[0][0].arrays(), runs[1][0].arrays()):
        assert a.tobytes() == b.tobytes()
    assert repr(runs[0][1]) == repr(runs[1][1])


def test_sin3_converges_and_trends_down():
    cfg = TrainConfig(iterations=2000, learning_rate=1e-3, hidden_layers=1, width=32, log_interval=100)
    params, log = train(cfg, sin3_dataset())
    assert log[-1].loss_val < 1e-4
    assert log[-1].loss_val + log[-1].loss_der < log[0].loss_val + log[0].loss_der


def test_value_only_matches_tangent_free_reference():
    cfg = TrainConfig(iterations=25, hidden_layers=2, width=8, use_sobolev=False, learning_rate=1e-3, log_interval=5)
    ds = sin3_dataset(30)
    params, _ = train(cfg, ds)

    # reference: plain backprop, no tangent arrays anywhere
    ref = default_model_factory(cfg, 1, 1)(Rng(cfg.seed).spawn(0))
    state = AdamState.zeros(ref)
    act, x, y = ref.activation, ds.coords, ds.values
    for _ in range(cfg.iterations):
        hs, d1s, h = [x], [], x
        for k, (w, b) in enumerate(zip(ref.weights, ref.biases)):
            z = h @ w.T + b
            if k == len(ref.weights) - 1:
                h = z
                break
            h, d1 = act.derivs(z, 1)
            hs.append(h)
            d1s.append(d1)
        g = (2.0 / x.shape[0]) * (h - y)
        grads = ref.zeros_like()
        for k in range(len(ref.weights) - 1, -1, -1):
            grads.weights[k] = g.T @ hs[k]
            grads.biases[k] = g.sum(axis=0)
            if k:
                g = (g @ ref.weights[k]) * d1s[k - 1]
        adam_step(state, ref, grads, cfg.learning_rate)
    for a, b in zip(params.arrays(), ref.arrays()):
        assert a.tobytes() == b.tobytes()


def test_minibatch_runs_and_logs():
    cfg = TrainConfig(iterations=30, hidden_layers=1, width=8, batch_size=7, log_interval=10)
    _, log = train(cfg, sin3_dataset(), evaluate=lambda p: 12.5)
    assert [r.iteration for r in log] == [10, 20, 30]
    assert all(r.psnr_eval == 12.5 for r in log)


def test_log_row_count():
    cfg = TrainConfig(iterations=60, hidden_layers=1, width=4, log_interval=20)
    _, log = train(cfg, sin3_dataset())
    assert len(log) == cfg.iterations // cfg.log_interval


def test_divergence_guard():
    ds = sin3_dataset()
    ds.values[3, 0] = np.inf
    cfg = TrainConfig(iterations=5, hidden_layers=1, width=4)
    with pytest.raises(TrainingDiverged, match="non-finite") as info:
        train(cfg, ds)
    assert info.value.iteration == 1


def test_sobolev_needs_derivs():
    ds = sin3_dataset()
    ds.derivs = None
    with pytest.raises(ValueError, match="derivative targets"):
        train(TrainConfig(iterations=1, hidden_layers=1, width=4), ds)


def test_metrics_csv_round_trip(tmp_path):
    rows = [MetricRow(10, 0.1234567890123, 1e-9, float("nan")), MetricRow(20, 1 / 3, 2.0, 31.5)]
    path = tmp_path / "m.csv"
    write_metrics_csv(rows, path)
    assert path.read_text().splitlines()[0] == "iteration,loss_val,loss_der,psnr_eval"
    back = read_metrics_csv(path)
    assert back[1] == rows[1]
    assert back[0][:3] == rows[0][:3] and np.isnan(back[0].psnr_eval)
