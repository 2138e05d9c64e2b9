"""Planar raster type shared by every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Intensities are snapped onto a fixed dyadic grid (multiples of 2**-48).
# With both operands on the grid, the difference and the sum of two rasters
# are exactly representable in float64 (the integer numerators stay below
# 2**53), so a residual plane satisfies plane + residual == source
# bit-for-bit.  The grid step (~3.6e-15) sits far below every tolerance used
# anywhere else in the package.
GRID_BITS = 48
_GRID_SCALE = float(1 << GRID_BITS)


def snap_unit(values) -> np.ndarray:
    """Clamp to [0, 1] and round to the nearest intensity grid point."""
    arr = np.asarray(values, dtype=np.float64)
    arr = np.clip(arr, 0.0, 1.0)
    return np.rint(arr * _GRID_SCALE) / _GRID_SCALE


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable multi-channel image.

    ``data`` has shape (channels, height, width) with float64 intensities in
    [0, 1]; grayscale images carry one channel, color images three.  A 2-D
    array is accepted and treated as grayscale.  Values are clamped and
    grid-snapped on construction and the backing array is frozen, so every
    public operation that returns an Image also returns in-range data.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[np.newaxis, :, :]
        if arr.ndim != 3:
            raise ValueError(f"image data must be 2-D or 3-D, got {arr.ndim}-D")
        channels, height, width = arr.shape
        if channels not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {channels}")
        if height < 1 or width < 1:
            raise ValueError(f"empty image: {height}x{width}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data must be finite")
        arr = snap_unit(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other: object):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def to_gray(self) -> "Image":
        """Channel-mean grayscale version of this image."""
        if self.channels == 1:
            return self
        return Image(self.data.mean(axis=0))

    @staticmethod
    def constant(width: int, height: int, value: float, channels: int = 1) -> "Image":
        return Image(np.full((channels, height, width), float(value)))
