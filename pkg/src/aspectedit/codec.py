"""Pluggable pixel<->latent codec (identity by default, invertible linear otherwise).

The linear codec applies an affine map to the channel vector of every
pixel, so a (C, H, W) image maps to a (C, H, W) latent with the same grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ShapeError


@dataclass(frozen=True)
class Codec:
    kind: str = "identity"
    matrix: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "identity":
            return
        if self.kind != "linear":
            raise InvalidArgumentError(f"unknown codec kind {self.kind!r}")
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidArgumentError("linear codec matrix must be square")
        if abs(np.linalg.det(m)) < 1e-12:
            raise InvalidArgumentError("linear codec matrix must be invertible")
        object.__setattr__(self, "matrix", m)
        bias = np.zeros(m.shape[0]) if self.bias is None else np.asarray(self.bias, float)
        if bias.shape != (m.shape[0],):
            raise ShapeError("codec bias length must match the matrix size")
        object.__setattr__(self, "bias", bias)


def _apply_channel_map(x: np.ndarray, matrix: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[0] != matrix.shape[1]:
        raise ShapeError(
            f"codec expects {matrix.shape[1]} channels, image has {x.shape[0]}"
        )
    flat = x.reshape(x.shape[0], -1)
    out = matrix @ flat + bias[:, None]
    return out.reshape(x.shape)


def encode(image: np.ndarray, codec: Codec) -> np.ndarray:
    if codec.kind == "identity":
        return np.array(image, dtype=np.float64)
    return _apply_channel_map(np.asarray(image, float), codec.matrix, codec.bias)


def decode(latent: np.ndarray, codec: Codec) -> np.ndarray:
    if codec.kind == "identity":
        return np.array(latent, dtype=np.float64)
    inv = np.linalg.inv(codec.matrix)
    z = np.asarray(latent, float)
    if z.shape[0] != inv.shape[1]:
        raise ShapeError(
            f"codec expects {inv.shape[1]} channels, latent has {z.shape[0]}"
        )
    flat = z.reshape(z.shape[0], -1) - codec.bias[:, None]
    return (inv @ flat).reshape(z.shape)
