"""Sinusoidal positional encoding and its analytic Jacobian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncodingConfig:
    """``num_frequencies`` levels per axis at angular frequencies ``2**k * pi``.

    Channel layout of the encoded vector: the raw inputs (if kept), then every
    sine ordered by (axis, level), then every cosine in the same order.
    """

    num_frequencies: int = 5
    include_input: bool = True

    def __post_init__(self):
        if self.num_frequencies < 0:
            raise ValueError("num_frequencies must be >= 0")
        if self.num_frequencies == 0 and not self.include_input:
            raise ValueError("encoding would have no channels")

    def out_dim(self, in_dim: int) -> int:
        return in_dim * int(self.include_input) + 2 * self.num_frequencies * in_dim

    def frequencies(self) -> np.ndarray:
        return (2.0 ** np.arange(self.num_frequencies)) * np.pi


def _phases(cfg: EncodingConfig, x: np.ndarray) -> np.ndarray:
    # (batch, D * L) ordered by axis then level
    return (x[:, :, None] * cfg.frequencies()[None, None, :]).reshape(x.shape[0], -1)


def encode(cfg: EncodingConfig, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (batch, D) coordinates, got {x.shape}")
    parts = [x] if cfg.include_input else []
    if cfg.num_frequencies:
        ph = _phases(cfg, x)
        parts += [np.sin(ph), np.cos(ph)]
    return np.concatenate(parts, axis=1)


def encode_tangent(cfg: EncodingConfig, x, x_dot) -> np.ndarray:
    """Directional derivative of ``encode`` at ``x`` along ``x_dot``.

    ``x_dot`` has shape (batch, D) or (T, batch, D) for T directions at once.
    """
    x = np.asarray(x, dtype=np.float64)
    x_dot = np.asarray(x_dot, dtype=np.float64)
    squeeze = x_dot.ndim == 2
    if squeeze:
        x_dot = x_dot[None]
    batch, dim = x.shape
    parts = [x_dot] if cfg.include_input else []
    if cfg.num_frequencies:
        freqs = cfg.frequencies()
        ph = _phases(cfg, x)
        # chain rule: d/dt sin(w x) = w cos(w x) x_dot
        scaled = (x_dot[:, :, :, None] * freqs).reshape(x_dot.shape[0], batch, ph.shape[1])
        parts += [np.cos(ph) * scaled, -np.sin(ph) * scaled]
    out = np.concatenate(parts, axis=2)
    return out[0] if squeeze else out


def encode_dual(cfg: EncodingConfig, x, x_dot) -> tuple[np.ndarray, np.ndarray]:
    """``encode`` and ``encode_tangent`` sharing one sin/cos evaluation."""
    x = np.asarray(x, dtype=np.float64)
    x_dot = np.asarray(x_dot, dtype=np.float64)
    n_dir, batch = x_dot.shape[0], x.shape[0]
    vals = [x] if cfg.include_input else []
    tans = [x_dot] if cfg.include_input else []
    if cfg.num_frequencies:
        ph = _phases(cfg, x)
        s, c = np.sin(ph), np.cos(ph)
        scaled = (x_dot[:, :, :, None] * cfg.frequencies()).reshape(n_dir, batch, ph.shape[1])
        vals += [s, c]
        tans += [c * scaled, -s * scaled]
    return np.concatenate(vals, axis=1), np.concatenate(tans, axis=2)


def encode_jacobian(cfg: EncodingConfig, x) -> np.ndarray:
    """Partial derivatives of every encoded channel, one grid per input axis.

    Returns shape (D, batch, D_enc); entry ``[d]`` is d(encode)/d(x_d).
    """
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[1]
    seeds = np.broadcast_to(np.eye(dim)[:, None, :], (dim, x.shape[0], dim))
    return encode_tangent(cfg, x, seeds)


def identity_tangents(x) -> np.ndarray:
    """Input-tangent seeds for an un-encoded network: the identity columns."""
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[1]
    return np.ascontiguousarray(np.broadcast_to(np.eye(dim)[:, None, :], (dim, x.shape[0], dim)))
