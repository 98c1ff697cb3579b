"""Variance/noise schedules and the elementary diffusion steps.

The schedule stores only the cumulative variance products ``alpha_bar``
(every sampling formula uses the cumulative form) plus the per-step noise
scales ``sigma``.  Timestep ``t`` runs 1..T with t=T the most noised;
``alpha_bar_at(0)`` is defined as 1 (clean data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidScheduleError
from .latents import check_same_shape

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2
COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative variance values alpha_bar[1..T] and noise scales sigma[1..T]."""

    alpha_bar: tuple
    sigma: tuple
    T: int
    kind: str

    def __post_init__(self):
        if self.T < 1 or len(self.alpha_bar) != self.T or len(self.sigma) != self.T:
            raise InvalidScheduleError("schedule length does not match T")
        ab = np.asarray(self.alpha_bar)
        if np.any(ab <= 0) or np.any(ab > 1):
            raise InvalidScheduleError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0):
            raise InvalidScheduleError("alpha_bar must be strictly decreasing in t")
        if any(s < 0 for s in self.sigma):
            raise InvalidScheduleError("sigma values must be nonnegative")
        for t in range(1, self.T + 1):
            if 1.0 - self.alpha_bar_at(t - 1) - self.sigma[t - 1] ** 2 < -1e-12:
                raise InvalidScheduleError(f"1 - alpha_bar[{t-1}] - sigma[{t}]^2 < 0")

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar for timestep t, with the t=0 (clean) convention of 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise InvalidArgumentError(f"timestep {t} outside [0, {self.T}]")
        return self.alpha_bar[t - 1]

    def sigma_at(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise InvalidArgumentError(f"timestep {t} outside [1, {self.T}]")
        return self.sigma[t - 1]

    def to_config(self, sigma_scale: float = 0.0) -> str:
        return (
            f"schedule.kind = {self.kind}\n"
            f"schedule.T = {self.T}\n"
            f"schedule.sigma_scale = {sigma_scale}\n"
        )


@dataclass(frozen=True)
class StepCoefficients:
    """Backward-step coefficients c_pred, c_dir, c_noise for timestep t."""

    c_pred: float
    c_dir: float
    c_noise: float


def step_coefficients(schedule: DiffusionSchedule, t: int) -> StepCoefficients:
    if t < 1:
        raise InvalidArgumentError("t must be >= 1")
    ab_prev = schedule.alpha_bar_at(t - 1)
    sig = schedule.sigma_at(t)
    dir_sq = 1.0 - ab_prev - sig * sig
    if dir_sq < -1e-12:
        raise InvalidScheduleError(f"1 - alpha_bar[{t-1}] - sigma[{t}]^2 < 0")
    return StepCoefficients(
        c_pred=math.sqrt(ab_prev),
        c_dir=math.sqrt(max(dir_sq, 0.0)),
        c_noise=sig,
    )


def build_schedule(
    kind: str,
    T: int,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    sigma_scale: float = 0.0,
) -> DiffusionSchedule:
    """Build a linear or cosine schedule of T steps.

    ``sigma_scale`` is the DDIM-style eta in [0, 1]; 0 (the default) gives a
    deterministic backward process.
    """
    if T < 1:
        raise InvalidArgumentError("T must be >= 1")
    if not 0.0 <= sigma_scale <= 1.0:
        raise InvalidArgumentError("sigma_scale must lie in [0, 1]")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise InvalidArgumentError("beta range must lie in (0, 1)")
        alpha_bar = np.cumprod(1.0 - betas)
    elif kind == "cosine":
        s = COSINE_OFFSET
        ts = np.arange(1, T + 1)
        alpha_bar = (
            np.cos((ts / T + s) / (1 + s) * math.pi / 2) ** 2
            / math.cos(s / (1 + s) * math.pi / 2) ** 2
        )
    else:
        raise InvalidArgumentError(f"unknown schedule kind {kind!r}")
    if np.any(alpha_bar <= 0) or np.any(alpha_bar > 1):
        raise InvalidArgumentError("parameters produce alpha_bar outside (0, 1]")

    sigma = np.zeros(T)
    if sigma_scale > 0:
        ab_prev = np.concatenate([[1.0], alpha_bar[:-1]])
        sigma = sigma_scale * np.sqrt(
            (1 - ab_prev) / (1 - alpha_bar) * (1 - alpha_bar / ab_prev)
        )
    return DiffusionSchedule(
        alpha_bar=tuple(alpha_bar.tolist()),
        sigma=tuple(sigma.tolist()),
        T=T,
        kind=kind,
    )


def forward_noise(z0, t: int, eps, schedule: DiffusionSchedule):
    """Noising step: sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps."""
    check_same_shape(z0, eps)
    ab = schedule.alpha_bar_at(t) if t >= 1 else None
    if ab is None:
        raise InvalidArgumentError("t must be >= 1")
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def ddim_predict_z0(z_t, eps_hat, t: int, schedule: DiffusionSchedule):
    """Clean-latent prediction: (z_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t)."""
    check_same_shape(z_t, eps_hat)
    ab = schedule.alpha_bar_at(t)
    if ab <= 0:
        raise InvalidScheduleError("alpha_bar[t] = 0: cannot invert the forward step")
    return (z_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def backward_step(z_t, t: int, z0_hat, eps_hat, noise, schedule: DiffusionSchedule):
    """Generic backward step c_pred * z0_hat + c_dir * eps_hat + c_noise * noise."""
    check_same_shape(z_t, z0_hat, eps_hat, noise)
    c = step_coefficients(schedule, t)
    return c.c_pred * z0_hat + c.c_dir * eps_hat + c.c_noise * noise
