"""Deterministic noise synthesis for building degraded/clean pairs.

All draws use numpy's PCG64 stream via ``default_rng(seed)``.  The draw
order is part of the contract so outputs stay reproducible:

* gaussian: one normal draw per sample in planar (channel, row, column) order
* impulse:  one uniform (height, width) replacement field, then one uniform
  (height, width) salt-vs-pepper field
"""

from __future__ import annotations

import numpy as np

from .image import Image


def add_gaussian_noise(a: Image, sigma255: float, seed: int) -> Image:
    """Add i.i.d. Gaussian noise of standard deviation sigma255/255.

    ``sigma255`` is expressed on the conventional 0-255 scale; the result is
    clamped back into [0, 1].
    """
    if sigma255 < 0:
        raise ValueError(f"sigma255 must be >= 0, got {sigma255}")
    rng = np.random.default_rng(seed)
    noisy = a.data + rng.normal(0.0, sigma255 / 255.0, size=a.data.shape)
    return Image(noisy)


def add_impulse_noise(a: Image, density: float, seed: int) -> Image:
    """Replace each pixel with probability ``density`` by pure black or white.

    A replaced pixel gets the same extreme on every channel; black and white
    are equally likely.
    """
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    rng = np.random.default_rng(seed)
    replace = rng.random((a.height, a.width)) < density
    extremes = np.where(rng.random((a.height, a.width)) < 0.5, 1.0, 0.0)
    out = np.array(a.data)
    out[:, replace] = extremes[replace]
    return Image(out)
