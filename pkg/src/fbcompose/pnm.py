"""Bit-exact PGM/PPM reading and writing (P2/P3/P5/P6, maxval 255).

8-bit samples map to value/255 on read and round half-up on write, so an
8-bit file survives a read/write round trip byte-for-byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .image import Image


class UnsupportedImageFormat(ValueError):
    """The file is not one of the supported netpbm encodings."""


class MalformedImageHeader(ValueError):
    """A header or sample token is present but unparseable or inconsistent."""


class TruncatedImageData(ValueError):
    """The pixel payload ends before width*height*channels samples."""


_MAGIC_CHANNELS = {b"P2": 1, b"P3": 3, b"P5": 1, b"P6": 3}
_ASCII_MAGICS = {b"P2", b"P3"}
_WHITESPACE = b" \t\n\r\x0b\x0c"


def _tokenize(blob: bytes, start: int, count: int) -> tuple[list[bytes], int]:
    """Collect `count` whitespace-separated tokens honoring '#' comments.

    Returns the tokens and the offset of the byte right after the last one.
    """
    tokens: list[bytes] = []
    i = start
    n = len(blob)
    while len(tokens) < count:
        while i < n:
            ch = blob[i : i + 1]
            if ch in (b"#",):
                while i < n and blob[i : i + 1] not in (b"\n", b"\r"):
                    i += 1
            elif ch in _WHITESPACE:
                i += 1
            else:
                break
        if i >= n:
            raise TruncatedImageData(
                f"file ended after {len(tokens)} of {count} expected values"
            )
        begin = i
        while i < n and blob[i : i + 1] not in _WHITESPACE and blob[i : i + 1] != b"#":
            i += 1
        tokens.append(blob[begin:i])
    return tokens, i


def _parse_int(token: bytes, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise MalformedImageHeader(f"non-numeric {what}: {token!r}") from None


def read_image(path) -> Image:
    """Load a PGM (P2/P5) or PPM (P3/P6) file with maxval 255."""
    blob = Path(path).read_bytes()
    if blob[:8] == b"\x89PNG\r\n\x1a\n":
        raise UnsupportedImageFormat("PNG input is not supported; use PGM/PPM")
    magic = blob[:2]
    if magic not in _MAGIC_CHANNELS:
        raise UnsupportedImageFormat(f"unsupported magic {magic!r}; expected P2/P3/P5/P6")
    channels = _MAGIC_CHANNELS[magic]

    header, offset = _tokenize(blob, 2, 3)
    width = _parse_int(header[0], "width")
    height = _parse_int(header[1], "height")
    maxval = _parse_int(header[2], "maxval")
    if width < 1 or height < 1:
        raise MalformedImageHeader(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedImageFormat(f"only maxval 255 is supported, got {maxval}")

    total = width * height * channels
    if magic in _ASCII_MAGICS:
        tokens, _ = _tokenize(blob, offset, total)
        samples = np.empty(total, dtype=np.float64)
        for pos, token in enumerate(tokens):
            value = _parse_int(token, "sample")
            if not 0 <= value <= 255:
                raise MalformedImageHeader(f"sample {value} outside 0..255")
            samples[pos] = value
    else:
        # Binary payload starts after exactly one whitespace byte.
        if offset >= len(blob) or blob[offset : offset + 1] not in _WHITESPACE:
            raise MalformedImageHeader("missing whitespace before binary payload")
        payload = blob[offset + 1 : offset + 1 + total]
        if len(payload) < total:
            raise TruncatedImageData(
                f"payload holds {len(payload)} bytes, expected {total}"
            )
        samples = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)

    pixels = samples.reshape(height, width, channels)
    return Image(pixels.transpose(2, 0, 1) / 255.0)


def write_image(img: Image, path, ascii_format: bool = False) -> None:
    """Write ``img`` as PGM (1 channel) or PPM (3 channels), maxval 255.

    Binary encodings (P5/P6) by default; ``ascii_format`` selects P2/P3.
    Samples are quantized by round half-up.
    """
    samples = np.floor(img.data * 255.0 + 0.5).astype(np.uint8)
    interleaved = samples.transpose(1, 2, 0)  # (h, w, c)
    if ascii_format:
        magic = "P2" if img.channels == 1 else "P3"
        lines = [magic, f"{img.width} {img.height}", "255"]
        flat = interleaved.reshape(-1)
        for begin in range(0, flat.size, 12):  # keep ASCII lines short
            lines.append(" ".join(str(v) for v in flat[begin : begin + 12]))
        Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))
    else:
        magic = "P5" if img.channels == 1 else "P6"
        header = f"{magic}\n{img.width} {img.height}\n255\n".encode("ascii")
        Path(path).write_bytes(header + interleaved.tobytes())
