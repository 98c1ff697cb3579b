"""Evaluation harness: pixel metrics, directional embedding similarity,
and per-aspect edit accuracy with pluggable embedders.

The shipped toy embedder is fully deterministic (hashed bag-of-token
projections for text, region-statistics projections for images) so every
metric is reproducible without any pretrained model.  Perceptual metrics
that require external models are registry slots that error until an
adapter is registered.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .attention import BinaryMask
from .errors import (
    BackendError,
    CompositionError,
    EmptyRegionError,
    ShapeError,
    UnsupportedBackendError,
)
from .plan import EditPlan, apply_plan, tokenize

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# Vision-language accuracy prompt, with {elements} holding the bracketed
# aspect list (e.g. "A [pink] [taxi] with [colorful] [flowers] on top").
VLM_ACCURACY_PROMPT = (
    "Does the image match the elements in [ ]: {elements}? "
    "Return a list of numbers where 1 is matched and 0 is unmatched."
)


@dataclass(frozen=True)
class MetricsReport:
    psnr: float | None = None
    mse: float | None = None
    ssim: float | None = None
    dclip: float | None = None
    aspacc: float | None = None
    per_aspect: tuple = ()

    def to_dict(self) -> dict:
        out = {}
        for key in ("psnr", "mse", "ssim", "dclip", "aspacc"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if self.per_aspect:
            out["per_aspect"] = list(self.per_aspect)
        return out


def _as_image(a) -> np.ndarray:
    arr = np.asarray(a, float)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ShapeError(f"image must be (H, W) or (C, H, W), got shape {arr.shape}")
    return arr


def _ssim_windows(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over sliding valid windows, uniform weights, per channel."""
    c, h, w = a.shape
    win = min(SSIM_WINDOW, h, w)
    values = []
    for ch in range(c):
        for y in range(h - win + 1):
            for x in range(w - win + 1):
                pa = a[ch, y:y + win, x:x + win]
                pb = b[ch, y:y + win, x:x + win]
                values.append(_ssim_patch(pa.ravel(), pb.ravel()))
    return float(np.mean(values))


def _ssim_patch(x: np.ndarray, y: np.ndarray) -> float:
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    return float(
        (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
    )


def pixel_metrics(a, b, mask: BinaryMask | None = None) -> MetricsReport:
    """PSNR/MSE/SSIM between two [0, 1] images, optionally mask-restricted.

    With a mask, MSE/PSNR average over masked pixels and SSIM uses the
    masked pixel population as a single window.
    """
    a = _as_image(a)
    b = _as_image(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask is not None:
        if mask.shape != a.shape[1:]:
            raise ShapeError(f"mask shape {mask.shape} does not match image {a.shape[1:]}")
        sel = mask.grid.astype(bool)
        if not sel.any():
            raise EmptyRegionError("metric mask selects no pixels")
        xa = a[:, sel].ravel()
        xb = b[:, sel].ravel()
        mse = float(np.mean((xa - xb) ** 2))
        ssim = _ssim_patch(xa, xb)
    else:
        mse = float(np.mean((a - b) ** 2))
        ssim = _ssim_windows(a, b)
    if mse < 1e-10:
        psnr = PSNR_CAP_DB
    else:
        psnr = min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))
    return MetricsReport(psnr=psnr, mse=mse, ssim=ssim)


# ---------------------------------------------------------------------------
# Embedders
# ---------------------------------------------------------------------------

TOY_EMBED_DIM = 64
_TOY_IMAGE_FEATURES = 24
_toy_projection = np.random.default_rng(20240817).standard_normal(
    (TOY_EMBED_DIM, _TOY_IMAGE_FEATURES)
)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


class ToyEmbedder:
    """Deterministic stand-in for a vision-language embedding model."""

    name = "toy"

    def text_embed(self, text: str) -> np.ndarray:
        total = np.zeros(TOY_EMBED_DIM)
        for tok in tokenize(text):
            digest = hashlib.sha256(tok.lower().encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            total += rng.standard_normal(TOY_EMBED_DIM)
        return _unit(total)

    def image_embed(self, image) -> np.ndarray:
        img = _as_image(image)
        feats = []
        h, w = img.shape[1:]
        for ch in range(4):
            if ch < img.shape[0]:
                x = img[ch]
                quads = [
                    x[: h // 2 or 1, : w // 2 or 1].mean(),
                    x[: h // 2 or 1, w // 2:].mean() if w > 1 else x.mean(),
                    x[h // 2:, : w // 2 or 1].mean() if h > 1 else x.mean(),
                    x[h // 2:, w // 2:].mean() if h > 1 and w > 1 else x.mean(),
                ]
                feats.extend([x.mean(), x.std()] + quads)
            else:
                feats.extend([0.0] * 6)
        return _unit(_toy_projection @ np.array(feats))


@dataclass(frozen=True)
class DirectionalScore:
    score: float
    degenerate: bool


def dclip_score(embedder, src_image, edt_image, src_prompt: str, edt_prompt: str) -> DirectionalScore:
    """Cosine between the image-embedding change and text-embedding change."""
    try:
        di = embedder.image_embed(edt_image) - embedder.image_embed(src_image)
        dt = embedder.text_embed(edt_prompt) - embedder.text_embed(src_prompt)
    except Exception as exc:
        raise BackendError(f"embedder failed: {exc}") from exc
    ni, nt = np.linalg.norm(di), np.linalg.norm(dt)
    if ni < 1e-12 or nt < 1e-12:
        return DirectionalScore(score=0.0, degenerate=True)
    return DirectionalScore(score=float(di @ dt / (ni * nt)), degenerate=False)


def aspacc_clip(embedder, edt_image, plan: EditPlan):
    """Per-aspect edit accuracy via reverted-prompt similarity comparison.

    For each edited aspect, compare the image-text similarity of the full
    target prompt against the prompt with that single aspect reverted to
    its source form; the aspect passes on a strict win.  Aspects paired in
    the plan's aspect mapping pass only jointly.
    """
    edited = plan.edited_actions()
    if not edited:
        raise CompositionError("accuracy needs at least one edited aspect")
    img = embedder.image_embed(edt_image)
    full = embedder.text_embed(" ".join(apply_plan(plan)))
    s1 = float(img @ full)
    passes = []
    for action in edited:
        reverted_tokens = apply_plan(plan, skip=[action])
        if not reverted_tokens:
            raise CompositionError("aspect reversion produced an empty prompt")
        s2 = float(img @ embedder.text_embed(" ".join(reverted_tokens)))
        passes.append(s1 > s2)
    for pair in plan.aspect_mapping:
        i, j = pair
        if 0 <= i < len(passes) and 0 <= j < len(passes):
            joint = passes[i] and passes[j]
            passes[i] = passes[j] = joint
    return sum(passes) / len(passes), tuple(passes)


# ---------------------------------------------------------------------------
# External-adapter slots
# ---------------------------------------------------------------------------

_ADAPTERS: dict = {}


def register_adapter(metric_id: str, fn) -> None:
    _ADAPTERS[metric_id] = fn


def perceptual_distance(a, b):
    """Learned perceptual distance; needs a registered 'lpips' adapter."""
    if "lpips" not in _ADAPTERS:
        raise UnsupportedBackendError("unsupported-backend: no 'lpips' adapter registered")
    return _ADAPTERS["lpips"](a, b)


def aspacc_vlm(edt_image, plan: EditPlan):
    """Per-aspect accuracy via a vision-language model; needs an adapter.

    The adapter receives the image and the accuracy prompt built from
    VLM_ACCURACY_PROMPT with every edited aspect bracketed.
    """
    if "vlm" not in _ADAPTERS:
        raise UnsupportedBackendError("unsupported-backend: no 'vlm' adapter registered")
    target = tokenize(plan.target_prompt)
    spans = []
    for a in plan.edited_actions():
        if a.target_aspect is not None:
            spans.append((a.target_aspect.start, a.target_aspect.stop))
    pieces = []
    i = 0
    while i < len(target):
        span = next((s for s in spans if s[0] == i), None)
        if span is not None:
            pieces.append("[" + " ".join(target[span[0]:span[1]]) + "]")
            i = span[1]
        else:
            pieces.append(target[i])
            i += 1
    prompt = VLM_ACCURACY_PROMPT.format(elements=" ".join(pieces))
    flags = _ADAPTERS["vlm"](edt_image, prompt)
    return float(np.mean(flags)), tuple(bool(f) for f in flags)
