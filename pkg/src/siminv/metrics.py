"""Preservation metrics (MSE, PSNR, SSIM) on small grayscale or multichannel grids."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from siminv.errors import ParameterError

SSIM_WINDOW = 7
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class ImageGrid:
    """Row-major image with values clamped to ``[0, data_range]``."""

    values: np.ndarray
    width: int
    height: int
    channels: int = 1
    data_range: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.channels < 1 or self.data_range <= 0:
            raise ParameterError("image dimensions and range must be positive")
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if vals.size != self.width * self.height * self.channels:
            raise ParameterError("value count does not match width * height * channels")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("image values must be finite")
        vals = np.clip(vals, 0.0, self.data_range)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, array, data_range: float = 1.0) -> "ImageGrid":
        a = np.asarray(array, dtype=np.float64)
        if a.ndim == 2:
            a = a[..., None]
        if a.ndim != 3:
            raise ParameterError("expected (height, width) or (height, width, channels)")
        h, w, c = a.shape
        return cls(a.reshape(-1), w, h, c, data_range)

    def array(self) -> np.ndarray:
        """View as ``(height, width, channels)``."""
        return self.values.reshape(self.height, self.width, self.channels)

    def to_pgm(self, path, maxval: int = 255) -> None:
        """Plain-text graymap (P2); single-channel only."""
        if self.channels != 1:
            raise ParameterError("PGM holds one channel")
        levels = np.rint(self.array()[..., 0] / self.data_range * maxval).astype(int)
        with open(path, "w") as fh:
            fh.write(f"P2\n{self.width} {self.height}\n{maxval}\n")
            for row in levels:
                fh.write(" ".join(str(v) for v in row) + "\n")

    @classmethod
    def from_pgm(cls, path, data_range: float = 1.0) -> "ImageGrid":
        with open(path) as fh:
            tokens = [tok for line in fh for tok in line.split("#", 1)[0].split()]
        if not tokens or tokens[0] != "P2":
            raise ParameterError(f"{path} is not a plain PGM file")
        w, h, maxval = (int(x) for x in tokens[1:4])
        levels = np.array([int(x) for x in tokens[4:4 + w * h]], dtype=np.float64)
        if levels.size != w * h:
            raise ParameterError(f"{path} is truncated")
        return cls(levels / maxval * data_range, w, h, 1, data_range)


def _check_pair(a: ImageGrid, b: ImageGrid) -> None:
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels):
        raise ParameterError("images differ in dimensions")
    if a.data_range != b.data_range:
        raise ParameterError("images differ in dynamic range")


def mse(a: ImageGrid, b: ImageGrid) -> float:
    _check_pair(a, b)
    d = a.values - b.values
    return float(np.mean(d * d))


def psnr(a: ImageGrid, b: ImageGrid) -> float:
    """``10 log10(R^2 / mse)`` in dB; identical images give ``math.inf``."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(a.data_range ** 2 / err)


def ssim(a: ImageGrid, b: ImageGrid, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all fully-contained ``window x window`` uniform windows and channels.

    Window statistics use population (1/N) moments.
    """
    _check_pair(a, b)
    if a.width < window or a.height < window:
        raise ParameterError(f"image {a.width}x{a.height} is smaller than the {window}x{window} window")
    c1 = (K1 * a.data_range) ** 2
    c2 = (K2 * a.data_range) ** 2
    x = sliding_window_view(a.array(), (window, window), axis=(0, 1))
    y = sliding_window_view(b.array(), (window, window), axis=(0, 1))
    mx = x.mean(axis=(-2, -1))
    my = y.mean(axis=(-2, -1))
    vx = ((x - mx[..., None, None]) ** 2).mean(axis=(-2, -1))
    vy = ((y - my[..., None, None]) ** 2).mean(axis=(-2, -1))
    cxy = ((x - mx[..., None, None]) * (y - my[..., None, None])).mean(axis=(-2, -1))
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    return float(s.mean())
