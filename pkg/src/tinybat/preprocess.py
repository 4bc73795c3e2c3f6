"""Image ingestion: P6 PPM decode, channel reduction, 32x32 resize, scaling.

Every stage is a pure function on numpy arrays; running the same bytes
through the pipeline yields the same tensor on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, ParameterError

TARGET_SIZE = 32

# BT.601 luma weights
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114


@dataclass
class RawImage:
    width: int
    height: int
    data: np.ndarray  # (height, width, 3) uint8, interleaved RGB

    channels = 3

    def __post_init__(self):
        if self.data.shape != (self.height, self.width, 3):
            raise DecodeError(
                f"pixel payload shape {self.data.shape} does not match "
                f"{self.height}x{self.width}x3"
            )


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def decode_ppm(payload: bytes) -> RawImage:
    """Parse a binary (P6) PPM with maxval 255."""
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(payload):
            ch = payload[pos : pos + 1]
            if ch == b"#":  # comment to end of line
                while pos < len(payload) and payload[pos : pos + 1] not in (b"\n", b""):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(payload) and not payload[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError("truncated PPM header")
        return payload[start:pos]

    magic = next_token()
    if magic != b"P6":
        raise DecodeError(f"unsupported PPM magic {magic!r} (binary P6 required)")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise DecodeError(f"non-numeric PPM header field: {exc}") from None
    if width < 1 or height < 1:
        raise DecodeError(f"bad PPM dimensions {width}x{height}")
    if maxval != 255:
        raise DecodeError(f"unsupported PPM maxval {maxval} (must be 255)")
    pos += 1  # exactly one whitespace byte separates header and pixels
    expected = width * height * 3
    pixels = payload[pos : pos + expected]
    if len(pixels) != expected:
        raise DecodeError(f"short PPM payload: expected {expected} bytes, got {len(pixels)}")
    data = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)
    return RawImage(width=width, height=height, data=data.copy())


def encode_ppm(image: RawImage) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.data.tobytes()


def to_single_channel(image: RawImage, mode: str = "luma") -> np.ndarray:
    """Reduce RGB to one 8-bit plane: BT.601 luma (default) or the green channel."""
    if mode == "green":
        return image.data[:, :, 1].copy()
    if mode != "luma":
        raise ParameterError(f"unknown channel mode {mode!r} (luma|green)")
    rgb = image.data.astype(np.float64)
    y = _LUMA_R * rgb[:, :, 0] + _LUMA_G * rgb[:, :, 1] + _LUMA_B * rgb[:, :, 2]
    return np.clip(_round_half_away(y), 0, 255).astype(np.uint8)


def resize_bilinear(plane: np.ndarray, out_h: int = TARGET_SIZE, out_w: int = TARGET_SIZE) -> np.ndarray:
    """Half-pixel-center bilinear resample of an 8-bit plane.

    Source coordinate: (dst + 0.5) * (in / out) - 0.5, clamped to the border;
    results round half away from zero back to 8 bits. A 32x32 input passes
    through unchanged.
    """
    in_h, in_w = plane.shape
    if in_h < 1 or in_w < 1:
        raise ParameterError("input plane must be at least 1x1")
    src = plane.astype(np.float64)

    def axis_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coords = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        lo = np.clip(np.floor(coords), 0, n_in - 1).astype(np.int64)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(coords - lo, 0.0, 1.0)
        return lo, hi, frac

    y0, y1, fy = axis_coords(out_h, in_h)
    x0, x1, fx = axis_coords(out_w, in_w)

    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return np.clip(_round_half_away(out), 0, 255).astype(np.uint8)


def normalize(plane: np.ndarray) -> np.ndarray:
    """8-bit plane -> (h, w, 1) real32 tensor in [0, 1]."""
    return (plane.astype(np.float32) / np.float32(255.0))[:, :, None]


def preprocess_image(payload: bytes, channel_mode: str = "luma") -> np.ndarray:
    """Full pipeline: decode -> single channel -> 32x32 -> [0, 1] tensor."""
    image = decode_ppm(payload)
    plane = to_single_channel(image, channel_mode)
    return normalize(resize_bilinear(plane))
