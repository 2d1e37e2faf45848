"""Ground models: flat plane and bilinear heightfield with filtered-noise generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Terrain:
    """Regular-grid heightfield. `heights[iy, ix]` sits at
    origin + (ix * cell, iy * cell); queries outside the grid clamp to the rim.
    A flat terrain has no grid and is zero everywhere."""

    heights: np.ndarray | None = None
    cell: float = 0.02
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def flat(self) -> bool:
        return self.heights is None

    def height(self, x, y):
        """Bilinear height at world (x, y); accepts scalars or arrays."""
        if self.heights is None:
            return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
        h = self.heights
        fx = (np.asarray(x, dtype=float) - self.origin[0]) / self.cell
        fy = (np.asarray(y, dtype=float) - self.origin[1]) / self.cell
        fx = np.clip(fx, 0.0, h.shape[1] - 1.000001)
        fy = np.clip(fy, 0.0, h.shape[0] - 1.000001)
        ix = np.floor(fx).astype(int)
        iy = np.floor(fy).astype(int)
        tx = fx - ix
        ty = fy - iy
        h00 = h[iy, ix]
        h10 = h[iy, ix + 1]
        h01 = h[iy + 1, ix]
        h11 = h[iy + 1, ix + 1]
        out = (h00 * (1 - tx) + h10 * tx) * (1 - ty) + (h01 * (1 - tx) + h11 * tx) * ty
        return float(out) if np.ndim(x) == 0 else out

    def normal(self, x: float, y: float) -> np.ndarray:
        if self.heights is None:
            return np.array([0.0, 0.0, 1.0])
        eps = 0.5 * self.cell
        dhdx = (self.height(x + eps, y) - self.height(x - eps, y)) / (2 * eps)
        dhdy = (self.height(x, y + eps) - self.height(x, y - eps)) / (2 * eps)
        n = np.array([-dhdx, -dhdy, 1.0])
        return n / np.linalg.norm(n)


def flat_terrain() -> Terrain:
    return Terrain()


def _gaussian_kernel(sigma: float) -> np.ndarray:
    half = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-half, half + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def noise_terrain(
    seed: int,
    roughness: float,
    correlation: float,
    extent: float = 8.0,
    cell: float = 0.02,
) -> Terrain:
    """Filtered Gaussian noise heightfield, zero mean, std equal to `roughness`,
    centred on the origin. `correlation` is the smoothing length in metres."""
    if roughness <= 0.0:
        return flat_terrain()
    rng = np.random.default_rng(seed)
    n = max(8, int(round(extent / cell)) + 1)
    raw = rng.standard_normal((n, n))
    kernel = _gaussian_kernel(max(correlation / cell, 0.5))
    smooth = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 1, raw)
    smooth = np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="same"), 0, smooth)
    smooth -= smooth.mean()
    std = smooth.std()
    if std > 0:
        smooth *= roughness / std
    return Terrain(heights=smooth, cell=cell, origin=np.array([-extent / 2, -extent / 2]))
