"""Classical smoothing kernels and their tagged parameter sets.

Every kernel is a pure function from image to image: clamp-to-edge borders,
dimensions preserved, exact (non-accelerated) evaluation.  Each config type
has a canonical one-line form shared by preset manifests, model files and
the CLI, e.g. ``bilateral:ss=0.5,sr=1.5,k=15`` or ``median:3x5``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .image import Image


def _fmt_num(x: float) -> str:
    value = float(x)
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _check_sigma(name: str, value: float) -> None:
    if not (value > 0):
        raise ValueError(f"{name} must be > 0, got {value}")


def _check_odd(name: str, value: int) -> None:
    if int(value) != value or value < 1 or value % 2 == 0:
        raise ValueError(f"{name} must be an odd integer >= 1, got {value}")


@dataclass(frozen=True)
class Bilateral:
    """Edge-preserving weighted average with spatial and range Gaussians."""

    sigma_spatial: float
    sigma_range: float
    window: int = 15

    def __post_init__(self):
        _check_sigma("sigma_spatial", self.sigma_spatial)
        _check_sigma("sigma_range", self.sigma_range)
        _check_odd("window", self.window)

    def canonical(self) -> str:
        return (
            f"bilateral:ss={_fmt_num(self.sigma_spatial)},"
            f"sr={_fmt_num(self.sigma_range)},k={self.window}"
        )


@dataclass(frozen=True)
class Median:
    """Order-statistic filter over a k1 (rows) x k2 (columns) window."""

    k1: int
    k2: int

    def __post_init__(self):
        _check_odd("k1", self.k1)
        _check_odd("k2", self.k2)

    def canonical(self) -> str:
        return f"median:{self.k1}x{self.k2}"


@dataclass(frozen=True)
class RollingGuidance:
    """Gaussian-initialized guide refined by iterated joint bilateral passes."""

    sigma_range: float
    sigma_spatial: float
    window: int = 9
    iterations: int = 2

    def __post_init__(self):
        _check_sigma("sigma_range", self.sigma_range)
        _check_sigma("sigma_spatial", self.sigma_spatial)
        _check_odd("window", self.window)
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be an integer >= 0, got {self.iterations}")

    def canonical(self) -> str:
        return (
            f"rgf:sr={_fmt_num(self.sigma_range)},ss={_fmt_num(self.sigma_spatial)},"
            f"k={self.window},t={self.iterations}"
        )


@dataclass(frozen=True)
class Gaussian:
    """Plain Gaussian blur."""

    sigma_spatial: float

    def __post_init__(self):
        _check_sigma("sigma_spatial", self.sigma_spatial)

    def canonical(self) -> str:
        return f"gauss:ss={_fmt_num(self.sigma_spatial)}"


FilterConfig = Union[Bilateral, Median, RollingGuidance, Gaussian]

_CONFIG_KEYS = {
    "bilateral": ("ss", "sr", "k"),
    "rgf": ("sr", "ss", "k", "t"),
    "gauss": ("ss",),
}


def parse_config(text: str) -> FilterConfig:
    """Parse a canonical config string back into its tagged form."""
    head, sep, body = text.strip().partition(":")
    if not sep:
        raise ValueError(f"bad filter config {text!r}: missing ':'")
    kind = head.strip().lower()
    if kind == "median":
        match = re.fullmatch(r"(\d+)x(\d+)", body.strip())
        if not match:
            raise ValueError(f"bad median config {text!r}: expected 'median:K1xK2'")
        return Median(int(match.group(1)), int(match.group(2)))
    if kind not in _CONFIG_KEYS:
        raise ValueError(f"unknown filter kind {kind!r} in {text!r}")
    fields: dict[str, str] = {}
    for part in body.split(","):
        key, eq, value = part.partition("=")
        if not eq:
            raise ValueError(f"bad filter config {text!r}: expected key=value, got {part!r}")
        fields[key.strip()] = value.strip()
    expected = _CONFIG_KEYS[kind]
    if set(fields) != set(expected):
        raise ValueError(
            f"bad filter config {text!r}: expected keys {sorted(expected)}, got {sorted(fields)}"
        )

    def number(name: str) -> float:
        try:
            return float(fields[name])
        except ValueError:
            raise ValueError(f"bad value for {name!r} in {text!r}") from None

    def integer(name: str) -> int:
        value = number(name)
        if value != int(value):
            raise ValueError(f"{name!r} must be an integer in {text!r}")
        return int(value)

    if kind == "bilateral":
        return Bilateral(number("ss"), number("sr"), integer("k"))
    if kind == "rgf":
        return RollingGuidance(number("sr"), number("ss"), integer("k"), integer("t"))
    return Gaussian(number("ss"))


def format_config(cfg: FilterConfig) -> str:
    return cfg.canonical()


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def gaussian_kernel1d(sigma_spatial: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    _check_sigma("sigma_spatial", sigma_spatial)
    radius = math.ceil(3.0 * sigma_spatial)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(xs * xs) / (2.0 * sigma_spatial * sigma_spatial))
    return taps / taps.sum()


def _correlate_edge(arr: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = taps.size // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, taps.size, axis=axis)
    return view @ taps


def gaussian_blur(a: Image, sigma_spatial: float) -> Image:
    """Separable 2-D Gaussian convolution, clamp-to-edge borders.

    The normalized 2-D kernel factors exactly into the outer product of the
    normalized 1-D taps, so this equals direct 2-D convolution.
    """
    taps = gaussian_kernel1d(sigma_spatial)
    out = _correlate_edge(_correlate_edge(a.data, taps, axis=2), taps, axis=1)
    return Image(out)


def joint_bilateral(
    a: Image, guide: Image, sigma_spatial: float, sigma_range: float, window: int
) -> Image:
    """Window-limited bilateral average of ``a`` with range weights from ``guide``.

    For every pixel p the output is the per-pixel normalized sum over the
    window x window neighborhood of f(spatial distance) * g(range distance)
    * a(q), where f and g are Gaussians of the given sigmas and the range
    distance is the Euclidean distance over guide's channel vector.
    """
    if a.shape != guide.shape:
        raise ValueError(f"joint_bilateral: image {a.shape} vs guide {guide.shape}")
    _check_sigma("sigma_spatial", sigma_spatial)
    _check_sigma("sigma_range", sigma_range)
    _check_odd("window", window)

    radius = window // 2
    src = a.data
    ref = guide.data
    _, height, width = src.shape
    pad = ((0, 0), (radius, radius), (radius, radius))
    padded_src = np.pad(src, pad, mode="edge")
    padded_ref = np.pad(ref, pad, mode="edge")
    inv_ss = 1.0 / (2.0 * sigma_spatial * sigma_spatial)
    inv_sr = 1.0 / (2.0 * sigma_range * sigma_range)

    accum = np.zeros_like(src)
    norm = np.zeros((height, width))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            rows = slice(radius + dy, radius + dy + height)
            cols = slice(radius + dx, radius + dx + width)
            values = padded_src[:, rows, cols]
            shifted_ref = padded_ref[:, rows, cols]
            delta = shifted_ref - ref
            dist2 = np.einsum("chw,chw->hw", delta, delta)
            weight = np.exp(-(dy * dy + dx * dx) * inv_ss - dist2 * inv_sr)
            accum += weight[np.newaxis] * values
            norm += weight
    return Image(accum / norm[np.newaxis])


def bilateral(a: Image, sigma_spatial: float, sigma_range: float, window: int) -> Image:
    """Bilateral filter: range weights taken from the image itself."""
    return joint_bilateral(a, a, sigma_spatial, sigma_range, window)


def median(a: Image, k1: int, k2: int) -> Image:
    """Exact k1 (rows) x k2 (columns) median per channel."""
    _check_odd("k1", k1)
    _check_odd("k2", k2)
    r1, r2 = k1 // 2, k2 // 2
    padded = np.pad(a.data, ((0, 0), (r1, r1), (r2, r2)), mode="edge")
    out = np.empty(a.data.shape)
    for c in range(a.channels):  # per channel keeps the window copies small
        windows = np.lib.stride_tricks.sliding_window_view(padded[c], (k1, k2))
        out[c] = np.median(windows, axis=(2, 3))
    return Image(out)


def rolling_guidance(a: Image, cfg: RollingGuidance) -> Image:
    """Gaussian initialization, then `iterations` joint bilateral passes of
    the input under the evolving guide."""
    guide = gaussian_blur(a, cfg.sigma_spatial)
    for _ in range(cfg.iterations):
        guide = joint_bilateral(a, guide, cfg.sigma_spatial, cfg.sigma_range, cfg.window)
    return guide


def apply(a: Image, cfg: FilterConfig) -> Image:
    """Dispatch an image through the kernel matching its config."""
    if isinstance(cfg, Bilateral):
        return bilateral(a, cfg.sigma_spatial, cfg.sigma_range, cfg.window)
    if isinstance(cfg, Median):
        return median(a, cfg.k1, cfg.k2)
    if isinstance(cfg, RollingGuidance):
        return rolling_guidance(a, cfg)
    if isinstance(cfg, Gaussian):
        return gaussian_blur(a, cfg.sigma_spatial)
    raise TypeError(f"unknown filter config: {cfg!r}")
