"""Finite-difference derivative targets and nearest-neighbour splits.

Image axes: ``u`` runs along columns (left to right), ``v`` along rows (top to
bottom).  Templates are stored in convolution form, so a signal increasing
along an axis gives a positive response.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import as_grid, conv3x3

SOBEL_U = np.array([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]])
SOBEL_V = SOBEL_U.T.copy()
VANILLA_U = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, -1.0], [0.0, 0.0, 0.0]])
VANILLA_V = VANILLA_U.T.copy()


@dataclass(frozen=True)
class FilterKind:
    tag: str
    gain: float


FILTERS = {
    "sobel": FilterKind("sobel", 8.0),
    "vanilla": FilterKind("vanilla", 2.0),
    "central1d": FilterKind("central1d", 1.0),
}

_TEMPLATES = {"sobel": (SOBEL_U, SOBEL_V), "vanilla": (VANILLA_U, VANILLA_V)}

UNIT_MODES = ("normalized", "raw")


def get_filter(kind) -> FilterKind:
    if isinstance(kind, FilterKind):
        return kind
    try:
        return FILTERS[kind]
    except KeyError:
        raise ValueError(f"unknown filter {kind!r}; choose from {sorted(FILTERS)}") from None


def image_derivatives(img, kind="sobel") -> tuple[np.ndarray, np.ndarray]:
    """Raw (unnormalised) template responses ``(du, dv)`` of an image.

    Divide by ``get_filter(kind).gain`` to obtain per-pixel slopes.
    """
    f = get_filter(kind)
    if f.tag not in _TEMPLATES:
        raise ValueError(f"filter {f.tag!r} is one-dimensional; use audio_derivative")
    tu, tv = _TEMPLATES[f.tag]
    return conv3x3(img, tu), conv3x3(img, tv)


def slope_scale(kind, n_axis: int, unit_mode: str = "normalized", spacing: float = 1.0) -> float:
    """Factor taking a raw filter response to the requested derivative units.

    ``normalized`` maps per-pixel slopes to slopes per unit of a [-1, 1]
    coordinate with pixel-centre sampling (pixel pitch ``2 / n_axis``);
    ``spacing`` is the pixel pitch of the filtered grid in full-resolution
    pixels.  ``raw`` returns the response unchanged.
    """
    if unit_mode == "raw":
        return 1.0
    if unit_mode != "normalized":
        raise ValueError(f"unknown unit mode {unit_mode!r}; choose from {UNIT_MODES}")
    return (n_axis / 2.0) / (get_filter(kind).gain * spacing)


def audio_derivative(signal, h: float = 1.0) -> np.ndarray:
    """Central differences, one-sided at the two endpoints."""
    s = as_grid(signal)
    if s.ndim != 1 or s.shape[0] < 3:
        raise ValueError(f"need a 1-D signal of length >= 3, got shape {s.shape}")
    d = np.empty_like(s)
    d[1:-1] = (s[2:] - s[:-2]) / (2.0 * h)
    d[0] = (s[1] - s[0]) / h
    d[-1] = (s[-1] - s[-2]) / h
    return d


def downsample_nearest(grid, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep the top-left pixel of every ``factor x factor`` block.

    Returns the small grid and the flat (row-major) indices of the kept
    pixels in the input.  Ragged trailing blocks keep their top-left pixel;
    ``factor == 1`` is the identity.
    """
    grid = as_grid(grid)
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    rows, cols = grid.shape[:2]
    r = np.arange(0, rows, factor)
    c = np.arange(0, cols, factor)
    index = (r[:, None] * cols + c[None, :]).ravel()
    return grid[::factor, ::factor].copy(), index


def downsample_nearest_1d(signal, factor: int) -> tuple[np.ndarray, np.ndarray]:
    s = as_grid(signal)
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    index = np.arange(0, s.shape[0], factor)
    return s[index].copy(), index


def upsample_nearest(small, factor: int, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of ``downsample_nearest``: each kept pixel fills its block."""
    small = as_grid(small)
    rows, cols = shape
    ri = np.arange(rows) // factor
    ci = np.arange(cols) // factor
    return small[ri[:, None], ci[None, :]]
