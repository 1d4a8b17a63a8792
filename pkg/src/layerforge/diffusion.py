"""Deterministic diffusion primitives.

Noise schedules, the closed-form forward process, DDIM stepping and
inversion (eta = 0), classifier-free guidance with std-rescaling, offset
noise, and inference timestep grids.

Conventions: timesteps are zero-indexed, t in [0, T_train-1]; t = -1 denotes
the clean signal with alpha_bar(-1) := 1.  Schedule tables are kept in
float64 so that algebraic identities hold to ~1e-10; latents stay float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, ContractError

CLEAN_T = -1  # sentinel timestep for the fully denoised signal


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep variances and their cumulative products.

    betas[t] is the variance added at step t; alphas = 1 - betas;
    alpha_bars[t] = prod_{s<=t} alphas[s].  All three are float64 tensors
    of length T_train.
    """

    T_train: int
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor
    schedule_kind: str

    def __post_init__(self):
        if self.T_train < 2:
            raise ConfigurationError(f"T_train must be >= 2, got {self.T_train}")
        b = self.betas
        if b.shape != (self.T_train,):
            raise ConfigurationError("betas must have length T_train")
        if not bool((b > 0).all() and (b < 1).all()):
            raise ConfigurationError("all betas must lie strictly in (0, 1)")
        diffs = self.alpha_bars[1:] - self.alpha_bars[:-1]
        if not bool((diffs < 0).all()):
            raise ConfigurationError("alpha_bars must be strictly decreasing")

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at timestep t; alpha_bar(-1) = 1 (clean)."""
        if t == CLEAN_T:
            return 1.0
        if not 0 <= t < self.T_train:
            raise ContractError(f"timestep {t} outside [-1, {self.T_train - 1}]")
        return float(self.alpha_bars[t])


def make_schedule(kind: str = "linear", T_train: int = 1000,
                  beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Build a noise schedule.

    linear: betas evenly spaced over [beta_min, beta_max].
    cosine: squared-cosine cumulative schedule with betas clamped into
    [beta_min, beta_max] (pass a large beta_max, e.g. 0.999, for the
    conventional clipping).
    """
    if T_train < 2:
        raise ConfigurationError(f"T_train must be >= 2, got {T_train}")
    if not (0.0 < beta_min < beta_max < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})")
    if kind == "linear":
        betas = torch.linspace(beta_min, beta_max, T_train, dtype=torch.float64)
    elif kind == "cosine":
        s = 0.008
        grid = torch.arange(T_train + 1, dtype=torch.float64) / T_train
        f = torch.cos((grid + s) / (1 + s) * math.pi / 2) ** 2
        betas = torch.clamp(1 - f[1:] / f[:-1], beta_min, beta_max)
    else:
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    return NoiseSchedule(T_train, betas, alphas, alpha_bars, kind)


@dataclass(frozen=True)
class TimestepGrid:
    """Strictly decreasing inference timesteps drawn from [0, T_train-1]."""

    steps: int
    indices: tuple
    spacing: str

    def __post_init__(self):
        idx = self.indices
        if len(idx) != self.steps:
            raise ConfigurationError("grid length must equal steps")
        if any(idx[i] <= idx[i + 1] for i in range(len(idx) - 1)):
            raise ConfigurationError("grid indices must be strictly decreasing")

    def transitions(self):
        """Yield (t, t_prev) pairs ending with (last_index, -1) for the clean step."""
        for i, t in enumerate(self.indices):
            t_prev = self.indices[i + 1] if i + 1 < len(self.indices) else CLEAN_T
            yield t, t_prev


def make_timestep_grid(T_train: int, steps: int, spacing: str = "trailing") -> TimestepGrid:
    """Select `steps` decreasing timesteps out of T_train training steps.

    trailing puts the first index at T_train-1 (round(T - i*T/steps) - 1);
    leading is the classic arange(0, steps) * (T_train // steps), reversed.
    Both reproduce the full grid when steps == T_train.
    """
    if steps < 1:
        raise ConfigurationError(f"steps must be >= 1, got {steps}")
    if steps > T_train:
        raise ConfigurationError(f"steps={steps} exceeds T_train={T_train}")
    if spacing == "trailing":
        pos = T_train - np.arange(steps, dtype=np.float64) * (T_train / steps)
        indices = np.round(pos).astype(np.int64) - 1
    elif spacing == "leading":
        indices = (np.arange(steps, dtype=np.int64) * (T_train // steps))[::-1]
    else:
        raise ConfigurationError(f"unknown spacing {spacing!r}")
    return TimestepGrid(steps, tuple(int(i) for i in indices), spacing)


# ---------------------------------------------------------------------------
# Forward process and DDIM transport
# ---------------------------------------------------------------------------

def q_sample(y0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Noise a clean latent to level t: sqrt(a_bar)*y0 + sqrt(1-a_bar)*eps."""
    if y0.shape != eps.shape:
        raise ContractError(f"y0 shape {tuple(y0.shape)} != eps shape {tuple(eps.shape)}")
    if not 0 <= t < schedule.T_train:
        raise ContractError(f"timestep {t} outside [0, {schedule.T_train - 1}]")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * y0 + math.sqrt(1.0 - ab) * eps


def sample_noise(shape, offset_strength: float = 0.0,
                 generator: torch.Generator | None = None) -> torch.Tensor:
    """Gaussian noise, optionally with a per-channel constant offset component.

    With offset_strength > 0 the result is eps + offset_strength * c where c
    is a single N(0,1) scalar per (batch, channel) broadcast over the spatial
    dimensions.  Expects shape (..., C, H, W).
    """
    if offset_strength < 0:
        raise ConfigurationError(f"offset_strength must be >= 0, got {offset_strength}")
    if len(shape) < 3:
        raise ContractError(f"noise shape needs at least (C, H, W) dims, got {tuple(shape)}")
    eps = torch.randn(shape, generator=generator)
    if offset_strength > 0:
        c = torch.randn((*shape[:-2], 1, 1), generator=generator)
        eps = eps + offset_strength * c
    return eps


def _transport(y: torch.Tensor, eps_pred: torch.Tensor, ab_from: float, ab_to: float) -> torch.Tensor:
    # Shared DDIM affine map: reconstruct y0 from (y, eps) at the source
    # noise level, then re-noise it to the destination level with the same eps.
    y0 = (y - math.sqrt(1.0 - ab_from) * eps_pred) / math.sqrt(ab_from)
    return math.sqrt(ab_to) * y0 + math.sqrt(1.0 - ab_to) * eps_pred


def ddim_step(y_t: torch.Tensor, eps_pred: torch.Tensor, t: int, t_prev: int,
              schedule: NoiseSchedule) -> torch.Tensor:
    """Deterministic DDIM update from level t down to t_prev (t_prev=-1 -> clean)."""
    if y_t.shape != eps_pred.shape:
        raise ContractError("y_t and eps_pred shapes differ")
    if t_prev >= t:
        raise ContractError(f"ddim_step requires t_prev < t, got t={t}, t_prev={t_prev}")
    return _transport(y_t, eps_pred, schedule.alpha_bar(t), schedule.alpha_bar(t_prev))


def ddim_invert_step(x_t: torch.Tensor, eps_pred: torch.Tensor, t: int, t_next: int,
                     schedule: NoiseSchedule) -> torch.Tensor:
    """Deterministic DDIM update from level t up to t_next (t may be -1 = clean)."""
    if x_t.shape != eps_pred.shape:
        raise ContractError("x_t and eps_pred shapes differ")
    if t_next <= t:
        raise ContractError(f"ddim_invert_step requires t_next > t, got t={t}, t_next={t_next}")
    return _transport(x_t, eps_pred, schedule.alpha_bar(t), schedule.alpha_bar(t_next))


# ---------------------------------------------------------------------------
# Classifier-free guidance with std rescaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GuidanceParams:
    """Classifier-free guidance strength and std-rescale mix factor."""

    scale: float = 1.0
    rescale: float = 0.0

    def __post_init__(self):
        if self.scale < 1.0:
            raise ConfigurationError(f"guidance scale must be >= 1, got {self.scale}")
        if not 0.0 <= self.rescale <= 1.0:
            raise ConfigurationError(f"guidance rescale must be in [0, 1], got {self.rescale}")


def apply_guidance(eps_cond: torch.Tensor, eps_uncond: torch.Tensor,
                   g: GuidanceParams) -> torch.Tensor:
    """Combine conditional/unconditional predictions with CFG + std rescale.

    cfg = scale*eps_cond + (1-scale)*eps_uncond.  The rescale term shrinks
    each channel of cfg toward eps_cond's per-channel std (computed over the
    spatial dims), mixing the rescaled and raw combinations with weight
    `rescale`.  scale=1 returns eps_cond itself; rescale=0 returns plain cfg.
    """
    if eps_cond.shape != eps_uncond.shape:
        raise ContractError("eps_cond and eps_uncond shapes differ")
    if g.scale == 1.0:
        return eps_cond
    cfg = g.scale * eps_cond + (1.0 - g.scale) * eps_uncond
    if g.rescale == 0.0:
        return cfg
    std_cond = eps_cond.std(dim=(-2, -1), keepdim=True)
    std_cfg = cfg.std(dim=(-2, -1), keepdim=True)
    ratio = torch.where(std_cfg > 0, std_cond / std_cfg, torch.ones_like(std_cfg))
    return g.rescale * (cfg * ratio) + (1.0 - g.rescale) * cfg
