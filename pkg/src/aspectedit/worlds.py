"""Ready-made analytic worlds for demos and end-to-end verification.

The two-aspect world places four mixture components at the corners of a
square; each prompt label pins one coordinate's sign, so a prompt naming
two labels selects exactly one component.  Editing both labels should
move a sample from one corner to the opposite one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import BinaryMask
from .plan import EditPlan, infer_plan
from .predictors import GaussianMixtureWorld

TWO_ASPECT_SOURCE_PROMPT = "the alpha and beta"
TWO_ASPECT_TARGET_PROMPT = "the gamma and delta"


@dataclass(frozen=True)
class DemoScenario:
    world: GaussianMixtureWorld
    plan: EditPlan
    masks: dict                 # action index -> (source mask, target mask)
    source_mean: np.ndarray
    target_mean: np.ndarray
    stddev: float


def two_aspect_world(separation: float = 2.0, stddev: float = 0.1) -> GaussianMixtureWorld:
    """Four equal-weight components at (+-separation, +-separation)."""
    corners = [(+1, +1), (+1, -1), (-1, +1), (-1, -1)]
    means = separation * np.array(corners, float)
    return GaussianMixtureWorld(
        means=means,
        stddevs=np.full(4, stddev),
        weights=np.full(4, 0.25),
        label_map={
            "alpha": (0, 1),     # first coordinate positive
            "gamma": (2, 3),     # first coordinate negative
            "beta": (0, 2),      # second coordinate positive
            "delta": (1, 3),     # second coordinate negative
        },
        label_blocks={
            "alpha": (0, 1),
            "gamma": (0, 1),
            "beta": (1, 2),
            "delta": (1, 2),
        },
    )


def _block_mask(block, dim: int) -> BinaryMask:
    grid = np.zeros((1, dim))
    grid[0, block[0]:block[1]] = 1.0
    return BinaryMask(grid=grid)


def plan_masks_from_blocks(plan: EditPlan, world: GaussianMixtureWorld) -> dict:
    """Derive per-action masks from the world's label coordinate blocks."""
    src = plan.source_tokens
    tgt = plan.target_tokens
    masks = {}
    for i, a in enumerate(plan.actions):
        if a.action == "none":
            continue
        src_mask = tgt_mask = None
        if a.source_aspect is not None:
            blocks = [
                world.label_blocks[t]
                for t in src[a.source_aspect.start:a.source_aspect.stop]
                if t in world.label_blocks
            ]
            if blocks:
                grid = np.zeros((1, world.dimension))
                for b in blocks:
                    grid[0, b[0]:b[1]] = 1.0
                src_mask = BinaryMask(grid=grid)
        if a.target_aspect is not None:
            blocks = [
                world.label_blocks[t]
                for t in tgt[a.target_aspect.start:a.target_aspect.stop]
                if t in world.label_blocks
            ]
            if blocks:
                grid = np.zeros((1, world.dimension))
                for b in blocks:
                    grid[0, b[0]:b[1]] = 1.0
                tgt_mask = BinaryMask(grid=grid)
        masks[i] = (src_mask, tgt_mask)
    return masks


def two_aspect_scenario(separation: float = 2.0, stddev: float = 0.1) -> DemoScenario:
    """The double-swap edit scenario used by the demo and the verification suite."""
    world = two_aspect_world(separation, stddev)
    plan = infer_plan(TWO_ASPECT_SOURCE_PROMPT, TWO_ASPECT_TARGET_PROMPT)
    return DemoScenario(
        world=world,
        plan=plan,
        masks=plan_masks_from_blocks(plan, world),
        source_mean=np.array([separation, separation]),
        target_mean=np.array([-separation, -separation]),
        stddev=stddev,
    )


LABEL_PAIRS = (("alpha", "gamma"), ("beta", "delta"), ("epsilon", "zeta"))


def multi_aspect_world(
    n_aspects: int,
    separation: float = 2.0,
    stddev: float = 0.1,
    block_size: int = 1,
) -> GaussianMixtureWorld:
    """One coordinate block per aspect; 2^n corner components pin block signs.

    ``block_size`` widens each aspect's coordinate block, scaling the
    latent dimension without changing the geometry.
    """
    if not 1 <= n_aspects <= len(LABEL_PAIRS):
        raise ValueError(f"n_aspects must be in [1, {len(LABEL_PAIRS)}]")
    n = n_aspects
    corners = [
        [1 - 2 * ((i >> d) & 1) for d in range(n)] for i in range(2 ** n)
    ]
    means = separation * np.repeat(np.array(corners, float), block_size, axis=1)
    label_map = {}
    blocks = {}
    for d, (src, tgt) in enumerate(LABEL_PAIRS[:n]):
        label_map[src] = tuple(i for i, c in enumerate(corners) if c[d] > 0)
        label_map[tgt] = tuple(i for i, c in enumerate(corners) if c[d] < 0)
        blocks[src] = blocks[tgt] = (d * block_size, (d + 1) * block_size)
    return GaussianMixtureWorld(
        means=means,
        stddevs=np.full(len(corners), stddev),
        weights=np.full(len(corners), 1.0 / len(corners)),
        label_map=label_map,
        label_blocks=blocks,
    )


def multi_aspect_scenario(
    n_aspects: int,
    edited: int | None = None,
    separation: float = 2.0,
    stddev: float = 0.1,
    block_size: int = 1,
) -> DemoScenario:
    """An n-block world editing the first ``edited`` aspects (default all)."""
    if edited is None:
        edited = n_aspects
    world = multi_aspect_world(n_aspects, separation, stddev, block_size)
    src_labels = [p[0] for p in LABEL_PAIRS[:n_aspects]]
    tgt_labels = [p[1] for p in LABEL_PAIRS[:edited]] + src_labels[edited:]
    source_prompt = "the " + " and ".join(src_labels)
    target_prompt = "the " + " and ".join(tgt_labels)
    plan = infer_plan(source_prompt, target_prompt)
    source_mean = separation * np.ones(n_aspects * block_size)
    target_mean = source_mean.copy()
    target_mean[: edited * block_size] *= -1
    return DemoScenario(
        world=world,
        plan=plan,
        masks=plan_masks_from_blocks(plan, world),
        source_mean=source_mean,
        target_mean=target_mean,
        stddev=stddev,
    )


def sample_source_latent(scenario: DemoScenario, seed: int) -> np.ndarray:
    """Draw a clean source latent from the source-prompt component."""
    rng = np.random.default_rng(seed)
    dim = scenario.source_mean.size
    flat = scenario.source_mean + scenario.stddev * rng.standard_normal(dim)
    return flat.reshape(1, 1, dim)
