"""PSNR and SSIM under the evaluation protocols used for images and audio."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])  # full-range BT.601


@dataclass(frozen=True)
class EvalProtocol:
    """Which pixels and channels a metric looks at.

    ``channel_mode`` is ``"luma_y"`` (RGB converted to Y) or ``"rgb_all"``
    (every channel as stored).  ``value_range`` is the nominal signal range;
    inputs are clamped to it and its width is the PSNR peak.
    """

    channel_mode: str = "rgb_all"
    border_crop: int = 0
    restrict_to_eval_samples: bool = False
    value_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.channel_mode not in ("luma_y", "rgb_all"):
            raise ValueError(f"unknown channel mode {self.channel_mode!r}")
        if self.border_crop < 0:
            raise ValueError("border_crop must be >= 0")

    @property
    def peak(self) -> float:
        return self.value_range[1] - self.value_range[0]


IMAGE_PROTOCOL = EvalProtocol("luma_y", border_crop=4, restrict_to_eval_samples=True)
RENDER_PROTOCOL = EvalProtocol("rgb_all")
AUDIO_PROTOCOL = EvalProtocol("rgb_all", restrict_to_eval_samples=True, value_range=(-1.0, 1.0))


def to_luma(img_rgb) -> np.ndarray:
    img = np.asarray(img_rgb, dtype=np.float64)
    if img.shape[-1] != 3:
        raise ValueError(f"expected 3 channels, got shape {img.shape}")
    return img @ LUMA_WEIGHTS


def _prepare(img, protocol: EvalProtocol) -> np.ndarray:
    """Clamp, convert channels and crop; result is (..., channels)."""
    x = np.clip(np.asarray(img, dtype=np.float64), *protocol.value_range)
    if protocol.channel_mode == "luma_y":
        x = to_luma(x)[..., None]
    elif x.ndim < 3:
        # 1-D signal or single-channel image
        x = x[..., None]
    b = protocol.border_crop
    if b:
        if x.ndim != 3:
            raise ValueError("border crop needs a 2-D image")
        rows, cols = x.shape[:2]
        if 2 * b >= rows or 2 * b >= cols:
            raise ValueError(f"border crop {b} too large for {rows}x{cols} image")
        x = x[b:-b, b:-b]
    return x


def _crop_mask(mask, protocol: EvalProtocol):
    mask = np.asarray(mask, dtype=bool)
    b = protocol.border_crop
    return mask[b:-b, b:-b] if b else mask


def psnr(pred, gt, protocol: EvalProtocol = RENDER_PROTOCOL, eval_mask=None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs.

    ``pred``/``gt`` are images ``(rows, cols[, C])`` or 1-D signals.  When the
    protocol restricts to evaluation samples, ``eval_mask`` (same spatial
    shape) selects them.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    a = _prepare(pred, protocol)
    b = _prepare(gt, protocol)
    sq = (a - b) ** 2
    if protocol.restrict_to_eval_samples and eval_mask is not None:
        m = _crop_mask(eval_mask, protocol)
        sq = sq[m]
    mse = float(np.mean(sq))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(protocol.peak**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' weighted window mean over the two leading axes."""
    k = g.shape[0]
    w0 = np.lib.stride_tricks.sliding_window_view(x, k, axis=0)
    y = w0 @ g
    w1 = np.lib.stride_tricks.sliding_window_view(y, k, axis=1)
    return w1 @ g


def ssim(pred, gt, protocol: EvalProtocol = RENDER_PROTOCOL, win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale Gaussian-window SSIM, averaged over windows and channels.

    Only windows lying fully inside the (border-cropped) image contribute.
    The protocol's eval-sample restriction is ignored.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    a = _prepare(pred, protocol)
    b = _prepare(gt, protocol)
    if a.ndim != 3 or a.shape[0] < win_size or a.shape[1] < win_size:
        raise ValueError(f"image {a.shape[:2]} smaller than the {win_size}x{win_size} window")
    c1 = (k1 * protocol.peak) ** 2
    c2 = (k2 * protocol.peak) ** 2
    g = gaussian_window(win_size, sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
