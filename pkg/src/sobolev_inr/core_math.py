"""Dense numeric substrate: matrix product, 3x3 convolution and a seeded RNG.

Grids are plain ``float64`` numpy arrays.  A single-channel grid is a 2-D
array ``(rows, cols)``; a multi-channel grid is ``(rows, cols, channels)``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Rng",
    "as_grid",
    "conv3x3",
    "matmul",
    "seeded_normal",
    "seeded_uniform",
]


def as_grid(a) -> np.ndarray:
    """Return ``a`` as a C-contiguous float64 array."""
    return np.ascontiguousarray(a, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product of two single-channel grids.

    Raises ``ValueError`` naming both shapes when the inner dimensions differ.
    """
    a = as_grid(a)
    b = as_grid(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def conv3x3(img, kernel) -> np.ndarray:
    """Convolve each channel of ``img`` with a 3x3 template.

    True convolution (the kernel is flipped), edges handled by replicating
    the border pixels.  Output has the input's shape.
    """
    img = as_grid(img)
    kernel = as_grid(kernel)
    if kernel.shape != (3, 3):
        raise ValueError(f"kernel must be 3x3, got {kernel.shape}")
    if img.ndim not in (2, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a (rows, cols[, channels]) grid, got {img.shape}")
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    rows, cols = img.shape[:2]
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    # out[i, j] = sum_ab k[a, b] * img[i - a + 1, j - b + 1]
    for a in range(3):
        for b in range(3):
            w = kernel[a, b]
            if w != 0.0:
                out += w * padded[2 - a : 2 - a + rows, 2 - b : 2 - b + cols]
    return out[:, :, 0] if squeeze else out


class Rng:
    """Seeded generator on the Philox-4x64 counter-based bit stream.

    Philox is a keyed bijection of a 256-bit counter (Salmon et al., 2011), so
    a given seed yields the same stream on every platform.  Uniform doubles
    use the top 53 bits of each 64-bit output; normals use Box-Muller on
    consecutive uniform pairs.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, lo: float = 0.0, hi: float = 1.0, n=1) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
        return lo + (hi - lo) * self._gen.random(n)

    def normal(self, mean: float = 0.0, std: float = 1.0, n=1) -> np.ndarray:
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        shape = (n,) if np.isscalar(n) else tuple(n)
        count = int(np.prod(shape))
        u = self._gen.random(2 * ((count + 1) // 2)).reshape(-1, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).ravel()
        return (mean + std * z[:count]).reshape(shape)

    def integers(self, low: int, high: int, n=1) -> np.ndarray:
        return self._gen.integers(low, high, n)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "Rng":
        """Independent child stream, deterministic in (seed, key)."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.Philox(key=[self.seed, int(key) + 1]))
        return child


def seeded_uniform(rng: Rng, lo: float, hi: float, n) -> np.ndarray:
    return rng.uniform(lo, hi, n)


def seeded_normal(rng: Rng, mean: float, std: float, n) -> np.ndarray:
    return rng.normal(mean, std, n)
