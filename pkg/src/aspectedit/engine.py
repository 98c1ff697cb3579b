"""Parallel multi-branch inversion-free editing.

Branch 0 reconstructs the source latent by consistency sampling; each
target branch n calibrates against branch n-1 by removing the predecessor
noise prediction and re-anchoring with a consistency noise computed
against the predecessor clean latent, then blends the update through the
accumulated edit masks.  In parallel mode a branch reads its
predecessor's previous-timestep values (one-step lag) so all branches can
advance simultaneously; in sequential mode it reads current-timestep
values.  All branches share each step's noise draw, so a branch whose
prediction matches its predecessor's copies it exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import BinaryMask, binarize
from .errors import (
    BackendError,
    InternalConsistencyError,
    InvalidArgumentError,
    MissingFeatureError,
)
from .grouping import GLOBAL, NON_RIGID, RIGID, BranchSpec
from .latents import as_latent, encode_f32, noise_like
from .plan import EditPlan
from .predictors import Conditioning, guided_epsilon, guided_epsilon_many
from .sampler import SamplerConfig
from .schedules import DiffusionSchedule

PARALLEL = "parallel"
SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class EngineConfig:
    sampler: SamplerConfig
    lam: float = 0.9
    beta: float = 0.8
    bin_threshold: float = 0.5
    mode: str = PARALLEL

    def __post_init__(self):
        for name, v in (("lam", self.lam), ("beta", self.beta), ("bin_threshold", self.bin_threshold)):
            if not 0.0 < v <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in (0, 1]")
        if self.mode not in (PARALLEL, SEQUENTIAL):
            raise InvalidArgumentError(f"unknown execution mode {self.mode!r}")


@dataclass
class BranchState:
    """Per-branch mutable state across the timestep loop."""

    n: int
    z_edt: np.ndarray
    z_noisy: np.ndarray
    z_prev_step: np.ndarray
    eps_param: np.ndarray | None
    accumulated_mask: BinaryMask


@dataclass(frozen=True)
class CrossBranchContext:
    """Attention-side context for one branch at one timestep."""

    token_maps: dict = field(default_factory=dict)   # token text -> grid
    queries: np.ndarray | None = None
    keys: np.ndarray | None = None
    values: np.ndarray | None = None
    masks: tuple = ()


@dataclass(frozen=True)
class BranchTraceRecord:
    branch: int
    step: int
    tau: int
    prompt: str
    z_noisy: np.ndarray
    eps_param: np.ndarray
    eps_cons: np.ndarray
    z_edt: np.ndarray


@dataclass(frozen=True)
class EditResult:
    final: np.ndarray
    trace: tuple


def branch_consistency_noise(z_noisy_n, z_prev_branch, tau: int, schedule: DiffusionSchedule):
    """Noise that re-anchors a denoise step on the predecessor clean latent."""
    ab = schedule.alpha_bar_at(tau)
    if ab >= 1.0:
        raise ZeroDivisionError("alpha_bar[tau] = 1: consistency noise undefined")
    return (z_noisy_n - math.sqrt(ab) * z_prev_branch) / math.sqrt(1.0 - ab)


def branch_update(z_noisy_n, eps_n, eps_n_minus_1, eps_cons_n, tau: int, schedule: DiffusionSchedule):
    """Calibrated denoise: remove the predecessor prediction, keep own edit.

    Returns (z_noisy - sqrt(1-ab) * (eps_n - eps_{n-1} + eps_cons)) / sqrt(ab).
    """
    ab = schedule.alpha_bar_at(tau)
    if not 0.0 < ab < 1.0:
        raise ZeroDivisionError("alpha_bar[tau] must lie strictly in (0, 1)")
    combined = eps_n - eps_n_minus_1 + eps_cons_n
    return (z_noisy_n - math.sqrt(1.0 - ab) * combined) / math.sqrt(ab)


def blend_latents(z_n, z_prev, masks, threshold: float = 0.5):
    """Keep z_n inside the union of the masks, z_prev outside it."""
    z_n = np.asarray(z_n, float)
    z_prev = np.asarray(z_prev, float)
    total = None
    for m in masks:
        grid = m.grid if isinstance(m, BinaryMask) else np.asarray(m, float)
        total = grid.copy() if total is None else total + grid
    if total is None:
        total = np.zeros(z_n.shape[-2:])
    blended = binarize(total, threshold).grid
    return blended * z_n + (1.0 - blended) * z_prev


def apply_cross_branch_control(
    ctx_n: CrossBranchContext, ctx_prev: CrossBranchContext, edit_type: str
) -> CrossBranchContext:
    """Adjust branch n's attention context against its predecessor's.

    Rigid edits inject the predecessor's maps for tokens both prompts
    share (edited tokens keep their own maps).  Non-rigid edits take the
    predecessor's key/value features, keep their own queries, and add the
    predecessor's masks.  Global edits keep everything unchanged.
    """
    if edit_type == GLOBAL:
        return ctx_n
    if edit_type == RIGID:
        maps = dict(ctx_n.token_maps)
        for token, grid in ctx_prev.token_maps.items():
            if token in maps:
                maps[token] = grid
        return CrossBranchContext(
            token_maps=maps,
            queries=ctx_n.queries,
            keys=ctx_n.keys,
            values=ctx_n.values,
            masks=ctx_n.masks,
        )
    if edit_type == NON_RIGID:
        keys, values = ctx_n.keys, ctx_n.values
        if ctx_n.keys is not None or ctx_n.values is not None:
            if ctx_prev.keys is None or ctx_prev.values is None:
                raise MissingFeatureError(
                    "non-rigid control needs predecessor key/value features"
                )
            keys, values = ctx_prev.keys, ctx_prev.values
        return CrossBranchContext(
            token_maps=dict(ctx_n.token_maps),
            queries=ctx_n.queries,
            keys=keys,
            values=values,
            masks=ctx_n.masks + ctx_prev.masks,
        )
    raise InvalidArgumentError(f"unknown edit type {edit_type!r}")


def _context(result, cond: Conditioning, masks) -> CrossBranchContext:
    maps = {}
    for ref in result.token_maps:
        maps[cond.prompt_tokens[ref.token_index]] = ref.grid
    return CrossBranchContext(token_maps=maps, masks=tuple(masks))


def run_edit(
    z_src,
    plan: EditPlan,
    branches: list[BranchSpec],
    predictor,
    config: EngineConfig,
    source_cond: Conditioning | None = None,
) -> EditResult:
    """Run the full N-branch edit; returns the last branch's final latent.

    Branch 0 (the source branch) is implicit: its clean latent is the
    source latent at every step and its noise prediction uses the source
    prompt.  Target branches consume ``branches`` in order.
    """
    z_src = as_latent(z_src)
    if not branches:
        raise InvalidArgumentError("run_edit needs at least one target branch")
    if any(b.conditioning is None for b in branches):
        raise InvalidArgumentError("branches must carry composed conditioning")
    sampler = config.sampler
    schedule = sampler.schedule
    taus = sampler.tau_grid()
    N = len(branches)
    if source_cond is None:
        source_cond = Conditioning.from_prompt(
            plan.source_prompt, branches[0].conditioning.label_bindings
        )
    conds = [source_cond] + [b.conditioning for b in branches]

    # accumulated union of group masks up to each branch, pre-binarized
    acc_grids: list[np.ndarray] = []
    running = None
    for b in branches:
        grid = b.group.union_mask.grid
        running = grid.copy() if running is None else running + grid
        acc_grids.append(binarize(running, config.bin_threshold).grid)

    # accumulated masks broadcast over the channel axis: (N, 1, H, W)
    mask_stack = np.stack(acc_grids)[:, None, :, :]

    clean = np.stack([z_src] * (N + 1))   # (N+1, C, H, W)
    trace: list[BranchTraceRecord] = []
    shape = z_src.shape

    for k, tau in enumerate(taus):
        ab = schedule.alpha_bar_at(tau)
        sq_ab, sq_1ab = math.sqrt(ab), math.sqrt(1.0 - ab)
        noise = noise_like(shape, sampler.seed, 0, k)
        if k == 0:
            noisy = np.broadcast_to(noise, clean.shape).copy()
        else:
            noisy = sq_ab * clean + sq_1ab * noise
        try:
            preds = guided_epsilon_many(
                predictor, list(noisy), tau, conds, sampler.guidance
            )
        except BackendError as exc:
            exc.step = k
            raise
        contexts = [
            _context(preds[n], conds[n], [branches[n - 1].group.union_mask] if n else [])
            for n in range(N + 1)
        ]
        for n in range(1, N + 1):
            contexts[n] = apply_cross_branch_control(
                contexts[n], contexts[n - 1], branches[n - 1].group.edit_type
            )
        eps = np.stack([p.epsilon for p in preds])

        # source branch: exact consistency denoise anchored on the true source
        eps_cons_src = (noisy[0] - sq_ab * z_src) / sq_1ab
        z0_new = (noisy[0] - sq_1ab * eps_cons_src) / sq_ab

        if config.mode == PARALLEL or k == 0:
            # all branch updates at once against previous-step snapshots
            z_lag = np.broadcast_to(z_src, (N,) + shape) if k == 0 else clean[:N]
            eps_cons = (noisy[:N] - sq_ab * z_lag) / sq_1ab
            updated = (noisy[1:] - sq_1ab * (eps[1:] - eps[:N] + eps_cons)) / sq_ab
            blended = mask_stack * updated + (1.0 - mask_stack) * z_lag
            new_clean = np.concatenate([z0_new[None], blended])
        else:
            new_clean = np.empty_like(clean)
            new_clean[0] = z0_new
            eps_cons = np.empty_like(clean[:N])
            for n in range(1, N + 1):
                z_lag = new_clean[n - 1]
                pred_noisy = sq_ab * z_lag + sq_1ab * noise
                try:
                    eps_prev = guided_epsilon(
                        predictor, pred_noisy, tau, conds[n - 1], sampler.guidance
                    ).epsilon
                except BackendError as exc:
                    exc.branch, exc.step = n - 1, k
                    raise
                eps_cons[n - 1] = (pred_noisy - sq_ab * z_lag) / sq_1ab
                z_new = (
                    noisy[n] - sq_1ab * (eps[n] - eps_prev + eps_cons[n - 1])
                ) / sq_ab
                g = mask_stack[n - 1]
                new_clean[n] = g * z_new + (1.0 - g) * z_lag

        for n in range(N + 1):
            trace.append(
                BranchTraceRecord(
                    branch=n,
                    step=k,
                    tau=tau,
                    prompt=conds[n].prompt,
                    z_noisy=noisy[n],
                    eps_param=preds[n].epsilon,
                    eps_cons=eps_cons_src if n == 0 else eps_cons[n - 1],
                    z_edt=new_clean[n],
                )
            )
        clean = new_clean

    if len(trace) != len(taus) * (N + 1):
        raise InternalConsistencyError("trace length does not match branches x steps")
    if not np.all(np.isfinite(clean[N])):
        raise InternalConsistencyError("final latent contains non-finite values")
    return EditResult(final=clean[N], trace=tuple(trace))


def sequential_repeat_baseline(
    z_src,
    plan: EditPlan,
    branches: list[BranchSpec],
    predictor,
    config: EngineConfig,
) -> EditResult:
    """Apply the branches one full engine run at a time (the slow baseline).

    Run i edits from branch i-1's prompt to branch i's prompt, starting
    from the previous run's output latent.
    """
    z = as_latent(z_src)
    bindings = branches[0].conditioning.label_bindings if branches else {}
    prev_prompt = plan.source_prompt
    trace: list[BranchTraceRecord] = []
    for spec in branches:
        sub_plan = EditPlan(
            source_prompt=prev_prompt,
            target_prompt=spec.conditioning.prompt,
            actions=(),
        )
        sub_branch = BranchSpec(
            index=1, group=spec.group, auxiliary=False, conditioning=spec.conditioning
        )
        result = run_edit(
            z,
            sub_plan,
            [sub_branch],
            predictor,
            config,
            source_cond=Conditioning.from_prompt(prev_prompt, bindings),
        )
        z = result.final
        trace.extend(result.trace)
        prev_prompt = spec.conditioning.prompt
    return EditResult(final=z, trace=tuple(trace))


def dump_trace(trace) -> str:
    """Newline-delimited per-(branch, step) records with float32 tensors."""
    lines = []
    for rec in trace:
        lines.append(
            json.dumps(
                {
                    "branch": rec.branch,
                    "step": rec.step,
                    "tau": rec.tau,
                    "prompt": rec.prompt,
                    "z_noisy": encode_f32(rec.z_noisy),
                    "eps_param": encode_f32(rec.eps_param),
                    "eps_cons": encode_f32(rec.eps_cons),
                    "z_edt": encode_f32(rec.z_edt),
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"
