import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sobolev_inr.io import read_png, read_wav
from sobolev_inr.metrics import RENDER_PROTOCOL
from sobolev_inr.network import load_checkpoint, predict
from sobolev_inr.pipelines import (
    AudioTask,
    ImageTask,
    audio_config,
    build_audio_dataset,
    build_image_dataset,
    center_coords,
    chirp,
    image_config,
    pixel_coords,
    run_audio_regression,
    run_image_regression,
    sweep_activations,
    to_gray,
)
from sobolev_inr.training import read_metrics_csv, train

TINY = dict(iterations=20, hidden_layers=1, width=16, log_interval=10)


def smooth_image(rows=24, cols=24):
    v, u = np.mgrid[0:rows, 0:cols] / max(rows, cols)
    return np.stack([0.5 + 0.4 * np.sin(3 * u), 0.5 + 0.4 * np.cos(2 * v), 0.5 * (u + v)], axis=2)


def test_split_counts_4x4():
    ds = build_image_dataset(np.zeros((4, 4, 3)), factor=4)
    assert ds.train_mask.sum() == 1 and (~ds.train_mask).sum() == 15


def test_split_counts_8x8():
    ds = build_image_dataset(np.zeros((8, 8, 3)), factor=4)
    assert ds.train_mask.sum() == 4 and (~ds.train_mask).sum() == 60
    assert ds.train_mask.mean() == 0.0625


def test_corner_coordinates():
    n = 8
    c = pixel_coords(n, n)
    np.testing.assert_allclose(c[0], [-(1 - 1 / n)] * 2)
    np.testing.assert_allclose(c[-1], [1 - 1 / n] * 2)
    np.testing.assert_allclose(center_coords(4), [-0.75, -0.25, 0.25, 0.75])


def test_coordinate_order_u_is_columns():
    c = pixel_coords(2, 3)
    assert c[1, 0] > c[0, 0] and c[1, 1] == c[0, 1]
    assert c[3, 1] > c[0, 1] and c[3, 0] == c[0, 0]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 6))
def test_masks_partition(rows, cols, factor):
    ds = build_image_dataset(np.zeros((rows, cols, 3)), factor=factor)
    assert ds.train_mask.sum() == math.ceil(rows / factor) * math.ceil(cols / factor)
    assert ds.coords.shape == (rows * cols, 2)


def test_dataset_deterministic():
    img = smooth_image()
    a, b = build_image_dataset(img), build_image_dataset(img)
    for x, y in ((a.coords, b.coords), (a.values, b.values), (a.derivs, b.derivs), (a.train_mask, b.train_mask)):
        assert np.array_equal(x, y)


def test_normalized_derivatives_of_a_ramp():
    cols = 16
    u = center_coords(cols)
    img = np.repeat(np.tile(0.25 * u + 0.5, (8, 1))[:, :, None], 3, axis=2)
    ds = build_image_dataset(img, factor=4)
    t = ds.deriv_tangents().reshape(2, 8, cols, 3)
    np.testing.assert_allclose(t[0][1:-1, 1:-1], 0.25, rtol=1e-12)
    np.testing.assert_allclose(t[1], 0.0, atol=1e-15)
    raw = build_image_dataset(img, factor=4, unit_mode="raw").deriv_tangents().reshape(2, 8, cols, 3)
    np.testing.assert_allclose(raw[0][1:-1, 1:-1], 8 * 0.25 * 2 / cols, rtol=1e-12)


def test_downsampled_deriv_source_same_units():
    cols = 32
    img = np.repeat(np.tile(0.3 * center_coords(cols) + 0.5, (32, 1))[:, :, None], 3, axis=2)
    ds = build_image_dataset(img, factor=4, deriv_source="downsampled")
    t = ds.deriv_tangents().reshape(2, 32, cols, 3)
    np.testing.assert_allclose(t[0][4:-4, 4:-4], 0.3, rtol=1e-12)
    with pytest.raises(ValueError):
        build_image_dataset(img, deriv_source="both")


def test_grayscale_accepted_and_bad_shapes_rejected():
    assert build_image_dataset(np.zeros((4, 4)), factor=2).channels == 1
    with pytest.raises(ValueError):
        build_image_dataset(np.zeros((4, 4, 2)))


def test_configs():
    cfg = image_config()
    assert (cfg.hidden_layers, cfg.width, cfg.iterations, cfg.learning_rate, cfg.omega0) == (4, 256, 50_000, 1e-4, 30.0)
    assert audio_config().learning_rate == 5e-5


def test_constant_image_exact_fit():
    task = ImageTask(np.zeros((2, 2, 3)), factor=1, protocol=RENDER_PROTOCOL,
                     config=image_config(init_scheme="zeros", **TINY))
    rep = run_image_regression(task)
    assert rep.psnr == float("inf")
    assert np.isnan(rep.ssim)


def test_prediction_reproduces_training_loss():
    img = smooth_image(12, 12)
    ds = build_image_dataset(img, factor=2)
    params, _ = train(image_config(**TINY), ds)
    _, log_b = train(image_config(**{**TINY, "iterations": 21, "log_interval": 21}), ds)
    idx = ds.train_mask
    pred = predict(params, ds.coords[idx])
    value = np.sum((pred - ds.values[idx]) ** 2) / idx.sum()
    assert value == pytest.approx(log_b[-1].loss_val, rel=1e-9)


def test_run_image_regression_writes_artifacts(tmp_path):
    task = ImageTask(smooth_image(), factor=4, config=image_config(**TINY), output_dir=tmp_path)
    rep = run_image_regression(task)
    for name in ("pred.png", "du.png", "dv.png", "metrics.csv", "manifest.json", "checkpoint.bin"):
        assert (tmp_path / name).exists(), name
    assert read_png(tmp_path / "pred.png").shape == (24, 24, 3)
    assert len(read_metrics_csv(tmp_path / "metrics.csv")) == 2
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["final_metrics"]["psnr"] == pytest.approx(rep.psnr)
    assert manifest["config"]["iterations"] == 20
    params, meta = load_checkpoint(tmp_path / "checkpoint.bin")
    assert meta["kind"] == "image"
    np.testing.assert_array_equal(params.weights[0], rep.params.weights[0])
    assert np.isfinite(rep.ssim) and rep.du.shape == rep.prediction.shape


def test_divergence_writes_manifest(tmp_path):
    img = smooth_image()
    img[3, 3, 0] = np.nan
    with pytest.raises(Exception, match="non-finite"):
        run_image_regression(ImageTask(img, config=image_config(**TINY), output_dir=tmp_path))
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert "non-finite" in manifest["failure"]


def test_audio_dataset():
    ds = build_audio_dataset(np.zeros(308207), factor=5)
    assert ds.train_mask.sum() == 61642
    n = 101
    wave = 0.5 * center_coords(n)
    ds = build_audio_dataset(wave, factor=5)
    np.testing.assert_allclose(ds.derivs[:, 0], 0.5, rtol=1e-12)
    with pytest.raises(ValueError, match="mono"):
        build_audio_dataset(np.zeros((10, 2)))
    with pytest.raises(ValueError):
        build_audio_dataset(np.zeros(2))


def test_silent_audio_exact():
    rep = run_audio_regression(AudioTask(np.zeros(50), rate=8000, config=audio_config(init_scheme="zeros", **TINY)))
    assert rep.psnr == float("inf")


def test_run_audio_writes_wav(tmp_path):
    wave = chirp(0.05, 8000)
    rep = run_audio_regression(AudioTask(wave, rate=8000, config=audio_config(**TINY), output_dir=tmp_path))
    back, rate = read_wav(tmp_path / "pred.wav")
    assert rate == 8000 and back.shape == (400,)
    assert np.max(np.abs(back - np.clip(rep.prediction, -1, 32767 / 32768))) <= 0.5 / 32768 + 1e-12
    assert json.loads((tmp_path / "manifest.json").read_text())["sample_rate"] == 8000


def test_chirp():
    c = chirp()
    assert c.shape == (8000,) and np.abs(c).max() <= 1.0 and c[0] == 0.0


def test_to_gray():
    g = to_gray(np.ones((3, 3, 3)))
    assert g.shape == (3, 3, 1)
    np.testing.assert_allclose(g, 1.0)


def test_sweep_small(tmp_path):
    cfg = image_config(**TINY)
    runs = sweep_activations(smooth_image(), cfg, activations=("tanh", "sine"), output_dir=tmp_path)
    assert [r.label for r in runs] == ["tanh", "tanh_pe", "sine"]
    for r in runs:
        assert len(read_metrics_csv(tmp_path / f"curve_{r.label}.csv")) == cfg.iterations // cfg.log_interval
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == "run,psnr,ssim,final_deriv_loss" and len(lines) == 4
