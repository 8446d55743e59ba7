"""Raster payload encoding: base64 of little-endian float32, row-major and
channel-interleaved, plus shape fields."""

from __future__ import annotations

import base64

import numpy as np


class PayloadError(ValueError):
    pass


def decode_image(image: dict) -> np.ndarray:
    try:
        h = int(image["height"])
        w = int(image["width"])
        c = int(image["channels"])
        raw = base64.b64decode(image["data"])
    except (KeyError, TypeError, ValueError) as e:
        raise PayloadError(f"malformed image payload: {e}") from e
    expected = h * w * c * 4
    if len(raw) != expected:
        raise PayloadError(
            f"image payload is {len(raw)} bytes, expected {expected} "
            f"for {h}x{w}x{c}"
        )
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return arr.reshape(h, w, c)


def encode_field(arr: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
    ).decode("ascii")
