"""Direct regression experiments: images and audio.

Samples are split by nearest-neighbour downscaling: one sample per block
trains, the rest are held out for evaluation.  Coordinates are pixel (or
sample) centres mapped to [-1, 1] via ``2 * (i + 0.5) / N - 1``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import filters
from .io import array_digest, write_manifest, write_png, write_wav
from .metrics import AUDIO_PROTOCOL, IMAGE_PROTOCOL, EvalProtocol, psnr, ssim
from .network import MlpParams, predict, predict_dual, save_checkpoint
from .training import SampledSignal, TrainConfig, TrainingDiverged, train, write_metrics_csv

log = logging.getLogger(__name__)

DERIV_SOURCES = ("full", "downsampled")


def center_coords(n: int) -> np.ndarray:
    return 2.0 * (np.arange(n) + 0.5) / n - 1.0


def pixel_coords(rows: int, cols: int) -> np.ndarray:
    """Row-major (u, v) coordinates; u follows columns, v follows rows."""
    u = center_coords(cols)
    v = center_coords(rows)
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def _as_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected an RGB (or single-channel) image, got shape {img.shape}")
    return img


def build_image_dataset(
    img,
    factor: int = 4,
    filter: str = "sobel",
    unit_mode: str = "normalized",
    deriv_source: str = "full",
) -> SampledSignal:
    """Dense pixel dataset with Sobel-style derivative targets and a train mask.

    ``deriv_source="full"`` filters the full-resolution image and samples the
    responses; ``"downsampled"`` filters the downsampled training image (each
    response then spans ``factor`` pixels).
    """
    img = _as_image(img)
    rows, cols, ch = img.shape
    kind = filters.get_filter(filter)
    small, kept = filters.downsample_nearest(img, factor)
    if deriv_source == "full":
        du, dv = filters.image_derivatives(img, kind)
        spacing = 1.0
    elif deriv_source == "downsampled":
        su, sv = filters.image_derivatives(small, kind)
        du = filters.upsample_nearest(su, factor, (rows, cols))
        dv = filters.upsample_nearest(sv, factor, (rows, cols))
        spacing = float(factor)
    else:
        raise ValueError(f"deriv_source must be one of {DERIV_SOURCES}")
    du = du * filters.slope_scale(kind, cols, unit_mode, spacing)
    dv = dv * filters.slope_scale(kind, rows, unit_mode, spacing)
    n = rows * cols
    derivs = np.concatenate([du.reshape(n, ch), dv.reshape(n, ch)], axis=1)
    mask = np.zeros(n, dtype=bool)
    mask[kept] = True
    return SampledSignal(pixel_coords(rows, cols), img.reshape(n, ch), derivs, mask, (rows, cols))


def image_config(**overrides) -> TrainConfig:
    """Image-regression defaults: 4 x 256 sine MLP, Adam 1e-4, 50k full-batch steps."""
    base = dict(learning_rate=1e-4, iterations=50_000, omega0=30.0, hidden_layers=4, width=256)
    base.update(overrides)
    return TrainConfig(**base)


def audio_config(**overrides) -> TrainConfig:
    """Audio-regression defaults: 4 x 256 sine MLP, Adam 5e-5, full batch."""
    base = dict(learning_rate=5e-5, iterations=50_000, omega0=30.0, hidden_layers=4, width=256)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class ImageTask:
    image: np.ndarray
    factor: int = 4
    config: TrainConfig = field(default_factory=image_config)
    protocol: EvalProtocol = IMAGE_PROTOCOL
    deriv_source: str = "full"
    output_dir: str | Path | None = None


@dataclass
class ImageReport:
    psnr: float
    ssim: float
    prediction: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    log: list
    params: MlpParams
    dataset: SampledSignal


def _protocol_for(task_protocol: EvalProtocol, channels: int) -> EvalProtocol:
    if channels == 1 and task_protocol.channel_mode == "luma_y":
        return replace(task_protocol, channel_mode="rgb_all")
    return task_protocol


def _ssim_or_nan(pred, img, protocol: EvalProtocol) -> float:
    """SSIM, or NaN when the cropped image is smaller than the window."""
    if min(img.shape[:2]) - 2 * protocol.border_crop < 11:
        log.warning("image too small for SSIM; reporting NaN")
        return float("nan")
    return ssim(pred, img, protocol)


def render_image(params: MlpParams, shape: tuple[int, int]) -> np.ndarray:
    rows, cols = shape
    return predict(params, pixel_coords(rows, cols)).reshape(rows, cols, -1)


def render_image_dual(params: MlpParams, shape: tuple[int, int]):
    """Prediction plus its u- and v-derivative fields, each (rows, cols, C)."""
    rows, cols = shape
    res = predict_dual(params, pixel_coords(rows, cols))
    out = res.primal.reshape(rows, cols, -1)
    return out, res.tangents[0].reshape(out.shape), res.tangents[1].reshape(out.shape)


def derivative_magnitude(field_img: np.ndarray) -> np.ndarray:
    """Per-pixel channel-norm of a derivative field, scaled to [0, 1]."""
    mag = np.sqrt(np.sum(field_img * field_img, axis=-1))
    top = mag.max()
    return mag / top if top > 0 else mag


def run_image_regression(task: ImageTask) -> ImageReport:
    """Train on the split pixels, render every pixel, and score held-out ones."""
    t0 = time.perf_counter()
    img = _as_image(task.image)
    cfg = task.config
    data = build_image_dataset(img, task.factor, cfg.filter, cfg.deriv_units, task.deriv_source)
    shape = img.shape[:2]
    protocol = _protocol_for(task.protocol, img.shape[2])
    eval_mask = ~data.train_mask.reshape(shape)
    if not eval_mask.any():
        eval_mask = np.ones(shape, dtype=bool)

    def evaluate(p):
        return psnr(render_image(p, shape), img, protocol, eval_mask)

    try:
        params, history = train(cfg, data, evaluate=evaluate)
    except TrainingDiverged as exc:
        if task.output_dir is not None:
            _dump_failure(task.output_dir, "fit-image", task.config, exc, time.perf_counter() - t0)
        raise
    pred, du, dv = render_image_dual(params, shape)
    report = ImageReport(
        psnr(pred, img, protocol, eval_mask),
        _ssim_or_nan(pred, img, protocol),
        pred,
        du,
        dv,
        history,
        params,
        data,
    )
    if task.output_dir is not None:
        _dump_image_run(task, report, time.perf_counter() - t0)
    return report


def _dump_image_run(task: ImageTask, report: ImageReport, seconds: float) -> None:
    out = Path(task.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report.log, out / "metrics.csv")
    manifest = {
        "command": "fit-image",
        "config": asdict(task.config),
        "factor": task.factor,
        "deriv_source": task.deriv_source,
        "protocol": asdict(task.protocol),
        "input_hash": array_digest(task.image),
        "wall_clock_seconds": seconds,
    }
    write_png(out / "pred.png", report.prediction)
    write_png(out / "du.png", derivative_magnitude(report.du))
    write_png(out / "dv.png", derivative_magnitude(report.dv))
    save_checkpoint(out / "checkpoint.bin", report.params, {"kind": "image", "shape": list(report.prediction.shape)})
    manifest["final_metrics"] = {"psnr": report.psnr, "ssim": report.ssim}
    manifest["result_hash"] = array_digest(*report.params.arrays())
    write_manifest(out / "manifest.json", manifest)


def _dump_failure(output_dir, command, config, exc, seconds) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(exc.log, out / "metrics.csv")
    write_manifest(
        out / "manifest.json",
        {"command": command, "config": asdict(config), "failure": str(exc), "wall_clock_seconds": seconds},
    )


# --- audio -----------------------------------------------------------------


def build_audio_dataset(wave, factor: int = 5, unit_mode: str = "normalized") -> SampledSignal:
    """Time-sample dataset with two-sided difference derivative targets."""
    w = np.asarray(wave, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"expected a mono waveform, got shape {w.shape}; convert to mono first")
    if w.shape[0] < 3:
        raise ValueError("waveform needs at least 3 samples")
    n = w.shape[0]
    d = filters.audio_derivative(w, 1.0) * filters.slope_scale("central1d", n, unit_mode)
    _, kept = filters.downsample_nearest_1d(w, factor)
    mask = np.zeros(n, dtype=bool)
    mask[kept] = True
    return SampledSignal(center_coords(n)[:, None], w[:, None], d[:, None], mask, (n,))


def normalize_waveform(wave) -> np.ndarray:
    """Scale to peak magnitude 1 (silence is returned unchanged)."""
    w = np.asarray(wave, dtype=np.float64)
    peak = np.abs(w).max() if w.size else 0.0
    return w / peak if peak > 0 else w.copy()


@dataclass
class AudioTask:
    wave: np.ndarray
    rate: int = 44_100
    factor: int = 5
    config: TrainConfig = field(default_factory=audio_config)
    protocol: EvalProtocol = AUDIO_PROTOCOL
    normalize: bool = True
    output_dir: str | Path | None = None


@dataclass
class AudioReport:
    psnr: float
    prediction: np.ndarray
    log: list
    params: MlpParams
    dataset: SampledSignal
    rate: int


def run_audio_regression(task: AudioTask) -> AudioReport:
    t0 = time.perf_counter()
    w = np.asarray(task.wave, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"expected a mono waveform, got shape {w.shape}; convert to mono first")
    if task.normalize:
        w = normalize_waveform(w)
    data = build_audio_dataset(w, task.factor, task.config.deriv_units)
    eval_mask = ~data.train_mask
    if not eval_mask.any():
        eval_mask = np.ones_like(eval_mask)

    def evaluate(p):
        return psnr(predict(p, data.coords)[:, 0], w, task.protocol, eval_mask)

    try:
        params, history = train(task.config, data, evaluate=evaluate)
    except TrainingDiverged as exc:
        if task.output_dir is not None:
            _dump_failure(task.output_dir, "fit-audio", task.config, exc, time.perf_counter() - t0)
        raise
    pred = predict(params, data.coords)[:, 0]
    report = AudioReport(psnr(pred, w, task.protocol, eval_mask), pred, history, params, data, task.rate)
    if task.output_dir is not None:
        out = Path(task.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_wav(out / "pred.wav", pred, task.rate)
        write_metrics_csv(history, out / "metrics.csv")
        save_checkpoint(out / "checkpoint.bin", params, {"kind": "audio", "samples": int(w.shape[0])})
        write_manifest(
            out / "manifest.json",
            {
                "command": "fit-audio",
                "config": asdict(task.config),
                "factor": task.factor,
                "sample_rate": task.rate,
                "input_hash": array_digest(task.wave),
                "final_metrics": {"psnr": report.psnr},
                "result_hash": array_digest(*params.arrays()),
                "wall_clock_seconds": time.perf_counter() - t0,
            },
        )
    return report


def chirp(seconds: float = 1.0, rate: int = 8000, f0: float = 20.0, f1: float = 200.0) -> np.ndarray:
    """Linear chirp sweeping ``f0`` to ``f1`` Hz."""
    t = np.arange(int(round(seconds * rate))) / rate
    k = (f1 - f0) / seconds
    return np.sin(2.0 * np.pi * (f0 * t + 0.5 * k * t * t))


# --- activation sweep -------------------------------------------------------

SWEEP_ACTIVATIONS = ("relu", "elu", "selu", "sigmoid", "softplus", "tanh", "sine")


@dataclass
class SweepRun:
    activation: str
    positional_encoding: bool
    psnr: float
    ssim: float
    final_deriv_loss: float
    log: list

    @property
    def label(self) -> str:
        return self.activation + ("_pe" if self.positional_encoding else "")


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return (img @ np.array([0.299, 0.587, 0.114]))[:, :, None]
    return _as_image(img)


def sweep_activations(
    image,
    config: TrainConfig | None = None,
    activations=SWEEP_ACTIVATIONS,
    factor: int = 4,
    output_dir=None,
) -> list:
    """Sobolev-train every activation with and without encoding on a gray image.

    Sine runs only without encoding.  Each run logs its derivative-loss curve;
    with ``output_dir`` one CSV per run plus ``summary.csv`` are written.
    """
    gray = to_gray(image)
    base = config or image_config(iterations=10_000)
    runs = []
    for act in activations:
        for pe in ((False,) if act == "sine" else (False, True)):
            cfg = replace(base, activation=act, use_positional_encoding=pe, use_sobolev=True)
            task = ImageTask(gray, factor, cfg, IMAGE_PROTOCOL)
            rep = run_image_regression(task)
            final_der = rep.log[-1].loss_der if rep.log else float("nan")
            run = SweepRun(act, pe, rep.psnr, rep.ssim, final_der, rep.log)
            log.info("%s: psnr %.2f ssim %.3f L_der %.4g", run.label, run.psnr, run.ssim, final_der)
            runs.append(run)
            if output_dir is not None:
                out = Path(output_dir)
                out.mkdir(parents=True, exist_ok=True)
                write_metrics_csv(run.log, out / f"curve_{run.label}.csv")
    if output_dir is not None:
        with open(Path(output_dir) / "summary.csv", "w") as fh:
            fh.write("run,psnr,ssim,final_deriv_loss\n")
            for r in runs:
                fh.write(f"{r.label},{float(r.psnr)!r},{float(r.ssim)!r},{float(r.final_deriv_loss)!r}\n")
    return runs
