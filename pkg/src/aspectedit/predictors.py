"""Noise prediction: conditioning, classifier-free guidance, consistency
noise, and the exact Gaussian-mixture analytic backend.

The mixture backend realizes the noise predictor in closed form: for
isotropic components, the posterior mean of the clean latent given a noisy
latent is available exactly, and the implied epsilon is
``(z_t - sqrt(ab) * m) / sqrt(1 - ab)``.  Conditioning selects a component
subset; the unconditional prediction uses the full mixture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BackendError,
    InvalidArgumentError,
    UnknownConditioningError,
)
from .latents import as_latent, check_same_shape
from .plan import tokenize
from .schedules import DiffusionSchedule


@dataclass(frozen=True)
class Conditioning:
    prompt_tokens: tuple
    label_bindings: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.prompt_tokens:
            raise InvalidArgumentError("conditioning needs a non-empty token list")

    @classmethod
    def from_prompt(cls, prompt: str, label_bindings: dict | None = None):
        return cls(tuple(tokenize(prompt)), dict(label_bindings or {}))

    @property
    def prompt(self) -> str:
        return " ".join(self.prompt_tokens)

    def labels(self) -> tuple:
        """Semantic labels in token order (bound label, else the bare token)."""
        cached = self.__dict__.get("_labels")
        if cached is None:
            cached = tuple(self.label_bindings.get(t, t) for t in self.prompt_tokens)
            self.__dict__["_labels"] = cached
        return cached


@dataclass(frozen=True)
class AttentionMapRef:
    """A (token_index, grid) pair produced alongside a prediction."""

    token_index: int
    grid: np.ndarray


@dataclass(frozen=True)
class PredictionResult:
    epsilon: np.ndarray
    token_maps: tuple = ()


def consistency_noise(z_t, z_ref, t: int, schedule: DiffusionSchedule):
    """Closed-form noise that makes one denoise step land exactly on z_ref."""
    check_same_shape(z_t, z_ref)
    ab = schedule.alpha_bar_at(t)
    if ab >= 1.0:
        raise ZeroDivisionError("alpha_bar[t] = 1: consistency noise undefined")
    return (z_t - math.sqrt(ab) * z_ref) / math.sqrt(1.0 - ab)


@dataclass(frozen=True)
class GaussianMixtureWorld:
    """Isotropic Gaussian mixture with label-indexed component subsets.

    ``label_map`` binds conditioning labels to component subsets, and
    ``label_blocks`` assigns each label a contiguous coordinate block of
    the (1, 1, D) latent, which doubles as its toy attention map.
    """

    means: np.ndarray          # (K, D)
    stddevs: np.ndarray        # (K,)
    weights: np.ndarray        # (K,)
    label_map: dict            # label -> tuple of component indices
    label_blocks: dict = field(default_factory=dict)  # label -> (start, stop)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, float))
        std = np.asarray(self.stddevs, float)
        w = np.asarray(self.weights, float)
        if not np.all(np.isfinite(means)):
            raise InvalidArgumentError("component means must be finite")
        if np.any(std <= 0):
            raise InvalidArgumentError("component stddevs must be positive")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError("weights must be positive and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stddevs", std)
        object.__setattr__(self, "weights", w)
        for label, idx in self.label_map.items():
            if len(idx) == 0:
                raise InvalidArgumentError(f"label {label!r} maps to no components")

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    def components_for(self, cond: Conditioning | None) -> np.ndarray:
        """Component indices selected by the conditioning (all if None)."""
        all_idx = np.arange(len(self.weights))
        if cond is None:
            return all_idx
        cache = self.__dict__.setdefault("_component_cache", {})
        cache_key = tuple(cond.labels())
        if cache_key in cache:
            return cache[cache_key]
        subsets = []
        for label in cond.labels():
            if label in self.label_map:
                subsets.append(frozenset(self.label_map[label]))
            elif label in cond.label_bindings.values() or label in dict(cond.label_bindings):
                raise UnknownConditioningError(label)
        for tok, label in cond.label_bindings.items():
            if label not in self.label_map:
                raise UnknownConditioningError(label)
        if not subsets:
            cache[cache_key] = all_idx
            return all_idx
        sel = frozenset.intersection(*subsets)
        if not sel:
            raise UnknownConditioningError(
                f"labels {cond.labels()} select no common component"
            )
        result = np.array(sorted(sel))
        cache[cache_key] = result
        return result

    def token_maps(self, cond: Conditioning | None) -> tuple:
        """Toy attention maps: 1 on the label's coordinate block, 0 elsewhere."""
        if cond is None:
            return ()
        key = tuple(cond.labels())
        cache = self.__dict__.setdefault("_map_cache", {})
        if key not in cache:
            maps = []
            for i, label in enumerate(key):
                if label in self.label_blocks:
                    start, stop = self.label_blocks[label]
                    grid = np.zeros((1, self.dimension))
                    grid[0, start:stop] = 1.0
                    maps.append(AttentionMapRef(token_index=i, grid=grid))
            cache[key] = tuple(maps)
        return cache[key]


def load_world(text: str) -> GaussianMixtureWorld:
    doc = json.loads(text)
    comps = doc["components"]
    return GaussianMixtureWorld(
        means=np.array([c["mean"] for c in comps], float),
        stddevs=np.array([c["stddev"] for c in comps], float),
        weights=np.array([c["weight"] for c in comps], float),
        label_map={k: tuple(v) for k, v in doc["labels"].items()},
        label_blocks={k: tuple(v) for k, v in doc.get("blocks", {}).items()},
    )


def dump_world(world: GaussianMixtureWorld) -> str:
    doc = {
        "components": [
            {"mean": m.tolist(), "stddev": float(s), "weight": float(w)}
            for m, s, w in zip(world.means, world.stddevs, world.weights)
        ],
        "labels": {k: list(v) for k, v in world.label_map.items()},
        "blocks": {k: list(v) for k, v in world.label_blocks.items()},
    }
    return json.dumps(doc, sort_keys=True)


def _posterior_means(world: GaussianMixtureWorld, Z: np.ndarray, ab: float, idx: np.ndarray):
    """Exact posterior mean E[z0 | z_t] for a batch Z of flat latents (B, D)."""
    mu = world.means[idx]                     # (k, D)
    var = ab * world.stddevs[idx] ** 2 + (1.0 - ab)   # (k,) marginal variance of z_t
    diff = Z[:, None, :] - math.sqrt(ab) * mu[None, :, :]   # (B, k, D)
    logw = (
        np.log(world.weights[idx])[None, :]
        - 0.5 * world.dimension * np.log(2 * math.pi * var)[None, :]
        - 0.5 * (diff ** 2).sum(axis=2) / var[None, :]
    )
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    shrink = math.sqrt(ab) * world.stddevs[idx] ** 2 / var   # (k,)
    cond_means = mu[None, :, :] + shrink[None, :, None] * diff   # (B, k, D)
    return (w[:, :, None] * cond_means).sum(axis=1)


def gmm_epsilon(
    world: GaussianMixtureWorld,
    z_t,
    t: int,
    cond: Conditioning | None,
    schedule: DiffusionSchedule,
) -> PredictionResult:
    """Exact epsilon implied by the mixture posterior mean."""
    z = as_latent(z_t)
    if z.size != world.dimension:
        raise InvalidArgumentError(
            f"latent has {z.size} entries, world dimension is {world.dimension}"
        )
    ab = schedule.alpha_bar_at(t)
    if ab >= 1.0:
        raise ZeroDivisionError("alpha_bar[t] = 1: epsilon undefined")
    idx = world.components_for(cond)
    m = _posterior_means(world, z.reshape(1, -1), ab, idx)[0]
    eps = (z.reshape(-1) - math.sqrt(ab) * m) / math.sqrt(1.0 - ab)
    return PredictionResult(
        epsilon=eps.reshape(z.shape), token_maps=world.token_maps(cond)
    )


class GmmPredictor:
    """Predictor facade over a GaussianMixtureWorld (pure, concurrent-safe)."""

    concurrent_safe = True

    def __init__(self, world: GaussianMixtureWorld, schedule: DiffusionSchedule):
        self.world = world
        self.schedule = schedule

    def predict(self, z_t, t: int, cond: Conditioning | None) -> PredictionResult:
        return self.predict_many([z_t], t, [cond])[0]

    def predict_many(self, z_list, t: int, cond_list) -> list[PredictionResult]:
        """Batched prediction, one vectorized pass for the whole batch.

        Rows with different conditionings share the computation: excluded
        components are masked out of the posterior-weight softmax.
        """
        world = self.world
        zs = [np.asarray(z, float) for z in z_list]
        Z = np.stack([z.reshape(-1) for z in zs])
        if Z.shape[1] != world.dimension:
            raise InvalidArgumentError(
                f"latent has {Z.shape[1]} entries, world dimension is {world.dimension}"
            )
        if not np.all(np.isfinite(Z)):
            raise InvalidArgumentError("latent contains non-finite values")
        ab = self.schedule.alpha_bar_at(t)
        if ab >= 1.0:
            raise ZeroDivisionError("alpha_bar[t] = 1: epsilon undefined")
        B, K = Z.shape[0], len(world.weights)
        sel = np.zeros((B, K), bool)
        for i, cond in enumerate(cond_list):
            sel[i, world.components_for(cond)] = True
        var = ab * world.stddevs ** 2 + (1.0 - ab)          # (K,)
        diff = Z[:, None, :] - math.sqrt(ab) * world.means[None, :, :]   # (B, K, D)
        logw = (
            np.log(world.weights)[None, :]
            - 0.5 * world.dimension * np.log(2 * math.pi * var)[None, :]
            - 0.5 * (diff ** 2).sum(axis=2) / var[None, :]
        )
        logw[~sel] = -np.inf
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        shrink = math.sqrt(ab) * world.stddevs ** 2 / var    # (K,)
        cond_means = world.means[None, :, :] + shrink[None, :, None] * diff
        M = (w[:, :, None] * cond_means).sum(axis=1)
        E = (Z - math.sqrt(ab) * M) / math.sqrt(1.0 - ab)
        return [
            PredictionResult(
                epsilon=E[i].reshape(zs[i].shape),
                token_maps=world.token_maps(cond_list[i]),
            )
            for i in range(len(zs))
        ]


def guided_epsilon(predictor, z_t, t: int, cond: Conditioning, guidance: float) -> PredictionResult:
    """Classifier-free guidance: eps_u + guidance * (eps_c - eps_u)."""
    if guidance < 0:
        raise InvalidArgumentError("guidance must be >= 0")
    try:
        if guidance == 0.0:
            res = predictor.predict(z_t, t, None)
            return PredictionResult(epsilon=res.epsilon, token_maps=res.token_maps)
        cond_res = predictor.predict(z_t, t, cond)
        if guidance == 1.0:
            return cond_res
        uncond_res = predictor.predict(z_t, t, None)
    except (UnknownConditioningError, ZeroDivisionError):
        raise
    except Exception as exc:  # backend failure surfaces with its cause
        raise BackendError(f"noise prediction failed: {exc}") from exc
    eps = uncond_res.epsilon + guidance * (cond_res.epsilon - uncond_res.epsilon)
    return PredictionResult(epsilon=eps, token_maps=cond_res.token_maps)


def guided_epsilon_many(predictor, z_list, t: int, cond_list, guidance: float) -> list[PredictionResult]:
    """Batched classifier-free guidance over several (latent, conditioning) pairs."""
    if guidance == 0.0:
        return predictor.predict_many(z_list, t, [None] * len(z_list))
    if guidance == 1.0:
        return predictor.predict_many(z_list, t, list(cond_list))
    if hasattr(predictor, "predict_many"):
        both = predictor.predict_many(
            list(z_list) + list(z_list), t, list(cond_list) + [None] * len(z_list)
        )
        cond_res, uncond_res = both[: len(z_list)], both[len(z_list):]
    else:
        cond_res = [predictor.predict(z, t, c) for z, c in zip(z_list, cond_list)]
        uncond_res = [predictor.predict(z, t, None) for z in z_list]
    return [
        PredictionResult(
            epsilon=u.epsilon + guidance * (c.epsilon - u.epsilon),
            token_maps=c.token_maps,
        )
        for c, u in zip(cond_res, uncond_res)
    ]
