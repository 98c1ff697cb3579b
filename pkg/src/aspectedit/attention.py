"""Attention maps and the binary-mask algebra used for grouping and blending.

Maps live on a (height, width) grid, one per prompt token.  Everything
downstream works on binarized masks: alpha mattes (area fractions),
mean intersection-over-union, and unions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ShapeError

DEFAULT_BIN_THRESHOLD = 0.5

SOURCE_PROMPT = "source-prompt"
TARGET_PROMPT = "target-prompt"


@dataclass(frozen=True)
class AttentionMap:
    grid: np.ndarray
    token_index: int
    origin: str = SOURCE_PROMPT

    def __post_init__(self):
        grid = np.asarray(self.grid, float)
        if grid.ndim != 2:
            raise ShapeError(f"attention grid must be 2-D, got shape {grid.shape}")
        if not np.all(np.isfinite(grid)) or np.any(grid < 0):
            raise InvalidArgumentError("attention values must be finite and >= 0")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class BinaryMask:
    grid: np.ndarray
    threshold_used: float = DEFAULT_BIN_THRESHOLD

    def __post_init__(self):
        grid = np.asarray(self.grid, float)
        if grid.ndim != 2:
            raise ShapeError(f"mask grid must be 2-D, got shape {grid.shape}")
        if not np.all((grid == 0.0) | (grid == 1.0)):
            raise InvalidArgumentError("mask entries must be exactly 0 or 1")
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self):
        return self.grid.shape

    def count(self) -> int:
        return int(self.grid.sum())


def attention_from_qk(Q, K, d: int, grid_shape, origin: str = SOURCE_PROMPT):
    """Per-token maps via row-wise softmax of Q Kᵀ / sqrt(d)."""
    Q = np.asarray(Q, float)
    K = np.asarray(K, float)
    if d < 1:
        raise InvalidArgumentError("d must be >= 1")
    if Q.ndim != 2 or K.ndim != 2 or Q.shape[1] != K.shape[1]:
        raise ShapeError(f"inner dimensions disagree: Q {Q.shape}, K {K.shape}")
    h, w = grid_shape
    if Q.shape[0] != h * w:
        raise ShapeError(f"Q has {Q.shape[0]} rows, grid needs {h * w}")
    logits = Q @ K.T / math.sqrt(d)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return tuple(
        AttentionMap(grid=probs[:, j].reshape(h, w), token_index=j, origin=origin)
        for j in range(K.shape[0])
    )


def binarize(m, threshold: float = DEFAULT_BIN_THRESHOLD) -> BinaryMask:
    """Threshold a map at ``threshold`` of its own maximum."""
    if not 0.0 < threshold <= 1.0:
        raise InvalidArgumentError("threshold must lie in (0, 1]")
    grid = np.asarray(m.grid if isinstance(m, (AttentionMap, BinaryMask)) else m, float)
    peak = grid.max() if grid.size else 0.0
    if peak <= 0:
        return BinaryMask(grid=np.zeros_like(grid), threshold_used=threshold)
    return BinaryMask(
        grid=(grid / peak >= threshold).astype(float), threshold_used=threshold
    )


def alpha_matte(mask: BinaryMask) -> float:
    """Fraction of grid cells the mask covers."""
    return float(mask.grid.mean()) if mask.grid.size else 0.0


def miou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = float((a.grid * b.grid).sum())
    union = float(np.maximum(a.grid, b.grid).sum())
    if union == 0:
        return 1.0
    return inter / union


def mask_union(*masks: BinaryMask) -> BinaryMask:
    if not masks:
        raise InvalidArgumentError("union of no masks is undefined")
    grid = np.zeros(masks[0].shape)
    for m in masks:
        if m.shape != masks[0].shape:
            raise ShapeError(f"mask shapes differ: {m.shape} vs {masks[0].shape}")
        grid = np.maximum(grid, m.grid)
    return BinaryMask(grid=grid, threshold_used=masks[0].threshold_used)


def synth_token_maps(blobs, grid_shape, origin: str = SOURCE_PROMPT):
    """Deterministic radial-falloff fixture maps, one per (token, center, radius).

    Each map is max(0, 1 - dist/radius) around the blob center.
    """
    h, w = grid_shape
    ys, xs = np.mgrid[0:h, 0:w]
    maps = {}
    for i, (token, center, radius) in enumerate(blobs):
        cy, cx = center
        if not (0 <= cy < h and 0 <= cx < w):
            raise InvalidArgumentError(f"blob center {center} outside {grid_shape} grid")
        if radius <= 0:
            raise InvalidArgumentError("blob radius must be positive")
        dist = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
        grid = np.maximum(0.0, 1.0 - dist / radius)
        maps[token] = AttentionMap(grid=grid, token_index=i, origin=origin)
    return maps


def dump_map(m: AttentionMap) -> str:
    """One-file-per-token text format: `H W token_index origin` then the values."""
    h, w = m.grid.shape
    body = "\n".join(" ".join(repr(v) for v in row) for row in m.grid.tolist())
    return f"{h} {w} {m.token_index} {m.origin}\n{body}\n"


def load_map(text: str) -> AttentionMap:
    lines = text.strip().splitlines()
    head = lines[0].split()
    if len(head) != 4:
        raise InvalidArgumentError("map header must be 'H W token_index origin'")
    h, w, idx, origin = int(head[0]), int(head[1]), int(head[2]), head[3]
    values = np.array([float(v) for line in lines[1:] for v in line.split()])
    if values.size != h * w:
        raise ShapeError(f"map body has {values.size} values, header says {h * w}")
    return AttentionMap(grid=values.reshape(h, w), token_index=idx, origin=origin)


def load_map_dir(directory) -> dict:
    """Ingest every `*.map` file in a directory, keyed by file stem."""
    maps = {}
    for path in sorted(Path(directory).glob("*.map")):
        maps[path.stem] = load_map(path.read_text())
    return maps
