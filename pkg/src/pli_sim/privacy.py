"""Client-side sanitization of parameter updates.

Every update leaving a client passes through L2 clipping followed by Gaussian
noise, the standard clipped-Gaussian mechanism. Noise is drawn from numpy's
Generator backed by PCG64, which produces normal deviates via the ziggurat
algorithm; this choice is fixed so that a given seed always yields the same
noise. A noise multiplier of zero disables the mechanism exactly (the input
vector is returned bit-for-bit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ClipConfig",
    "NoiseConfig",
    "SanitizedUpdate",
    "add_gaussian_noise",
    "clip_update",
    "gaussian_epsilon_bound",
    "sanitize",
]


@dataclass(frozen=True)
class ClipConfig:
    max_norm: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.max_norm) and self.max_norm > 0):
            raise ValueError("max_norm must be a positive finite real")


@dataclass(frozen=True)
class NoiseConfig:
    noise_multiplier: float = 0.0
    seed: int | None = None  # None: the harness derives one from its master seed

    def __post_init__(self) -> None:
        if not (math.isfinite(self.noise_multiplier) and self.noise_multiplier >= 0):
            raise ValueError("noise_multiplier must be a non-negative finite real")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class SanitizedUpdate:
    delta: np.ndarray
    clipped: bool
    pre_clip_norm: float


def clip_update(delta, cfg: ClipConfig) -> tuple[np.ndarray, bool, float]:
    """Scale `delta` onto the L2 ball of radius max_norm, preserving direction.

    Returns (vector, clipped, pre_clip_norm). The measured norm of the output
    never exceeds max_norm: after the analytic rescale, any residual
    floating-point excess is squeezed out by re-normalizing.
    """
    v = np.asarray(delta, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError("update vector contains non-finite values")
    norm = float(np.linalg.norm(v))
    if norm <= cfg.max_norm:
        return v.copy(), False, norm
    out = v * (cfg.max_norm / norm)
    while float(np.linalg.norm(out)) > cfg.max_norm:
        out = out * (cfg.max_norm / float(np.linalg.norm(out)))
    return out, True, norm


def add_gaussian_noise(v, clip_cfg: ClipConfig, noise_cfg: NoiseConfig) -> np.ndarray:
    """Add iid Normal(0, (sigma * max_norm)^2) noise from the seeded generator."""
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError("input vector contains non-finite values")
    if noise_cfg.noise_multiplier == 0.0:
        return v.copy()
    if noise_cfg.seed is None:
        raise ValueError("noise seed must be resolved before drawing")
    rng = np.random.default_rng(noise_cfg.seed)
    scale = noise_cfg.noise_multiplier * clip_cfg.max_norm
    return v + rng.normal(0.0, scale, size=v.shape)


def sanitize(delta, clip_cfg: ClipConfig, noise_cfg: NoiseConfig) -> SanitizedUpdate:
    """Clip then noise, recording the pre-clip norm and whether clipping fired."""
    clipped_vec, clipped, pre_norm = clip_update(delta, clip_cfg)
    noised = add_gaussian_noise(clipped_vec, clip_cfg, noise_cfg)
    return SanitizedUpdate(delta=noised, clipped=clipped, pre_clip_norm=pre_norm)


def gaussian_epsilon_bound(
    noise_multiplier: float, delta: float = 1e-5, rounds: int = 1
) -> float | None:
    """Upper bound on epsilon for the Gaussian mechanism at a given delta.

    Uses the classic calibration sigma >= sqrt(2 ln(1.25/delta)) / epsilon,
    inverted, and composes across rounds by simple summation. This is a loose
    upper bound with no advanced composition; None when noise is off.
    """
    if noise_multiplier == 0.0:
        return None
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    per_round = math.sqrt(2.0 * math.log(1.25 / delta)) / noise_multiplier
    return per_round * rounds
