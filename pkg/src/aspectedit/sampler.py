"""Inversion-free consistency sampling for the source branch.

Each step first denoises with a closed-form consistency noise computed
against the known clean latent — which makes the denoise land exactly on
it — and then re-noises to the next (lower) timestep.  Iterating over a
descending timestep grid reconstructs the source latent exactly without
any inversion pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import BackendError, InvalidArgumentError, InvalidScheduleError
from .latents import as_latent, encode_f32, noise_like
from .predictors import Conditioning, consistency_noise, guided_epsilon
from .schedules import DiffusionSchedule


@dataclass(frozen=True)
class SamplerConfig:
    schedule: DiffusionSchedule
    steps: int = 15
    guidance: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidArgumentError("steps must be >= 1")
        if self.steps > self.schedule.T:
            raise InvalidArgumentError(
                f"steps ({self.steps}) exceeds schedule length T={self.schedule.T}"
            )

    def tau_grid(self) -> list[int]:
        """Uniformly spaced timesteps over [1, T], descending."""
        if self.steps == 1:
            return [self.schedule.T]
        taus = np.linspace(self.schedule.T, 1, self.steps)
        return [int(round(t)) for t in taus]


@dataclass(frozen=True)
class StepRecord:
    tau: int
    z_tau: np.ndarray
    z: np.ndarray
    eps_cons: np.ndarray
    eps_param: np.ndarray


def denoise_step(z_tau, eps_cons, tau: int, schedule: DiffusionSchedule):
    """Step one of the sampling loop: invert the forward noising."""
    ab = schedule.alpha_bar_at(tau)
    if ab <= 0:
        raise InvalidScheduleError("alpha_bar[tau] = 0: denoise step is singular")
    return (z_tau - math.sqrt(1.0 - ab) * eps_cons) / math.sqrt(ab)


def renoise_step(z, tau: int, noise, schedule: DiffusionSchedule):
    """Step two: push the clean estimate back to noise level tau."""
    ab = schedule.alpha_bar_at(tau)
    return math.sqrt(ab) * z + math.sqrt(1.0 - ab) * noise


def sample_source(
    z_src,
    predictor,
    cond_src: Conditioning,
    config: SamplerConfig,
    branch: int = 0,
) -> list[StepRecord]:
    """Run the full consistency sampling loop against a known source latent.

    Returns one record per step; the parametric epsilon is recorded so a
    downstream branch can consume it.  The final ``z`` equals ``z_src``
    exactly (up to float rounding) by construction.
    """
    z_src = as_latent(z_src)
    schedule = config.schedule
    taus = config.tau_grid()
    trajectory = []
    z_tau = noise_like(z_src.shape, config.seed, branch, 0)
    for k, tau in enumerate(taus):
        eps_cons = consistency_noise(z_tau, z_src, tau, schedule)
        try:
            eps_param = guided_epsilon(
                predictor, z_tau, tau, cond_src, config.guidance
            ).epsilon
        except BackendError as exc:
            exc.step = k
            raise
        z = denoise_step(z_tau, eps_cons, tau, schedule)
        trajectory.append(
            StepRecord(tau=tau, z_tau=z_tau, z=z, eps_cons=eps_cons, eps_param=eps_param)
        )
        if k + 1 < len(taus):
            noise = noise_like(z_src.shape, config.seed, branch, k + 1)
            z_tau = renoise_step(z, taus[k + 1], noise, schedule)
    return trajectory


def dump_trajectory(trajectory) -> str:
    """Newline-delimited records with base64 little-endian float32 tensors."""
    lines = []
    for rec in trajectory:
        lines.append(
            json.dumps(
                {
                    "tau": rec.tau,
                    "z_tau": encode_f32(rec.z_tau),
                    "z": encode_f32(rec.z),
                    "eps_cons": encode_f32(rec.eps_cons),
                    "eps_param": encode_f32(rec.eps_param),
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"
