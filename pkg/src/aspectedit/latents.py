"""Latent tensor helpers: validation, RNG streams, and wire encoding.

A latent is a float64 numpy array of shape (channels, height, width).
All sampling math treats it as a flat vector; the shape only matters for
masks (which live on the (height, width) grid) and codecs.
"""

from __future__ import annotations

import base64

import numpy as np

from .errors import InvalidArgumentError, ShapeError


def as_latent(data, shape=None) -> np.ndarray:
    """Coerce ``data`` to a float64 latent of shape (C, H, W).

    1-D input of length D becomes shape (1, 1, D).
    """
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    elif arr.ndim == 1:
        arr = arr.reshape(1, 1, -1)
    if arr.ndim != 3:
        raise ShapeError(f"latent must be 3-D (C, H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("latent contains non-finite values")
    return arr


def check_same_shape(*tensors: np.ndarray) -> None:
    shapes = {t.shape for t in tensors}
    if len(shapes) > 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")


def noise_like(shape, seed: int, branch: int, step: int, channel: int = 0) -> np.ndarray:
    """Deterministic standard-normal draw keyed by (seed, branch, step, channel).

    The key is consumed by a counter-free generator, so parallel and
    sequential branch execution observe identical noise.
    """
    key = (np.uint64(seed).item(), branch, step, channel)
    rng = np.random.default_rng(key)
    return rng.standard_normal(shape)


def encode_f32(arr: np.ndarray) -> str:
    """Base64 of the array as little-endian 32-bit floats (wire/trace format)."""
    return base64.b64encode(np.asarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(text: str, shape=None) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(text), dtype="<f4").astype(np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr
