"""Forward-diffusion noise schedule and timestep sampling policies.

The forward process corrupts a latent ``z0`` at timestep ``t`` as

    z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps,    eps ~ N(0, I)

with ``abar_t = prod_{s<=t} alpha_s`` and ``alpha_t = 1 - beta_t`` for a
variance schedule ``beta_1..beta_T``.  Timesteps are 1-indexed; a range
written ``(lo, hi]`` means the integers ``lo+1 .. hi``.

All sampling here is driven by an explicitly passed
:class:`numpy.random.Generator`; nothing reads global RNG state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidBoundsError,
    ShapeMismatchError,
    TimestepRangeError,
    TimestepUnderflowError,
)

__all__ = [
    "NoiseSchedule",
    "TimestepPolicy",
    "build_linear_schedule",
    "forward_noise",
    "sample_timestep",
    "evenly_spaced_policy",
    "policy_timesteps",
    "multi_step_timesteps",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep noise variances and their cumulative products.

    ``betas[t-1]``, ``alphas[t-1]``, ``alpha_bars[t-1]`` hold the values
    for 1-indexed timestep ``t``.  Immutable after construction.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        for name in ("betas", "alphas", "alpha_bars"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if arr.shape != (self.T,):
                raise InvalidBoundsError(f"{name} must have length T={self.T}")
        if not (np.all(self.betas > 0.0) and np.all(self.betas < 1.0)):
            raise InvalidBoundsError("betas must lie strictly inside (0, 1)")

    def alpha_bar(self, t: int) -> float:
        """Cumulative product abar_t for a 1-indexed timestep."""
        self.check_timestep(t)
        return float(self.alpha_bars[t - 1])

    def check_timestep(self, t: int) -> None:
        if not isinstance(t, (int, np.integer)):
            raise TimestepRangeError(f"timestep must be an integer, got {t!r}")
        if not 1 <= t <= self.T:
            raise TimestepRangeError(f"timestep {t} outside [1, {self.T}]")


def build_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end`` inclusive.

    Raises :class:`InvalidBoundsError` unless ``0 < beta_start <= beta_end < 1``
    and ``T >= 1``.
    """
    if T < 1:
        raise InvalidBoundsError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidBoundsError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def forward_noise(z0, t: int, eps, schedule: NoiseSchedule):
    """One-shot forward noising: sqrt(abar_t)*z0 + sqrt(1-abar_t)*eps.

    ``z0`` and ``eps`` may be numpy arrays or torch tensors of equal shape;
    the result has the same type.  Deterministic: the caller supplies eps.
    """
    schedule.check_timestep(t)
    if tuple(z0.shape) != tuple(eps.shape):
        raise ShapeMismatchError(f"z0 shape {tuple(z0.shape)} != eps shape {tuple(eps.shape)}")
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * z0 + math.sqrt(1.0 - abar) * eps


@dataclass(frozen=True)
class TimestepPolicy:
    """Where scoring and training draw their timesteps from.

    ``uniform-range`` draws integers uniformly from ``(lo, hi]``;
    ``fixed-list`` restricts draws to ``values`` and enumerates exactly
    ``values`` when a deterministic list is requested.  ``count`` is the
    number of timesteps used per scored image.
    """

    mode: str = "uniform-range"
    lo: int = 0
    hi: int = 100
    count: int = 8
    values: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.mode not in ("uniform-range", "fixed-list"):
            raise InvalidBoundsError(f"unknown policy mode {self.mode!r}")
        if self.mode == "uniform-range":
            if not 0 <= self.lo < self.hi:
                raise InvalidBoundsError(f"need 0 <= lo < hi, got ({self.lo}, {self.hi}]")
        else:
            values = tuple(int(v) for v in self.values)
            if not values:
                raise InvalidBoundsError("fixed-list policy needs at least one timestep")
            if any(v < 1 for v in values):
                raise InvalidBoundsError("fixed-list timesteps must be >= 1")
            object.__setattr__(self, "values", values)
        if self.count < 1:
            raise InvalidBoundsError(f"count must be >= 1, got {self.count}")


def sample_timestep(policy: TimestepPolicy, rng: np.random.Generator) -> int:
    """Draw a single timestep according to the policy."""
    if policy.mode == "uniform-range":
        return int(rng.integers(policy.lo + 1, policy.hi + 1))
    return int(policy.values[rng.integers(0, len(policy.values))])


def evenly_spaced_policy(lo: int, hi: int, count: int) -> TimestepPolicy:
    """Deterministic fixed-list policy: right endpoints of ``count`` equal
    sub-intervals of ``(lo, hi]``.

    For ``(0, 100]`` with ``count=8`` this yields 13, 25, 38, 50, 63, 75,
    88, 100; ``count=1`` yields ``hi``.
    """
    if not 0 <= lo < hi:
        raise InvalidBoundsError(f"need 0 <= lo < hi, got ({lo}, {hi}]")
    span = hi - lo
    values = tuple(lo + math.ceil((j + 1) * span / count) for j in range(count))
    return TimestepPolicy(mode="fixed-list", count=count, values=values)


def policy_timesteps(policy: TimestepPolicy, rng: np.random.Generator) -> list[int]:
    """The ``count`` timesteps one scoring pass averages over.

    A fixed-list policy enumerates its list (cycled to ``count`` entries);
    a uniform-range policy draws ``count`` independent samples.
    """
    if policy.mode == "fixed-list":
        return [policy.values[j % len(policy.values)] for j in range(policy.count)]
    return [sample_timestep(policy, rng) for _ in range(policy.count)]


def multi_step_timesteps(t_start: int, steps: int, delta: int) -> list[int]:
    """Descending chain ``[t_start, t_start-delta, ...]`` of length ``steps``.

    Raises :class:`TimestepUnderflowError` if any element would drop below 1.
    """
    if steps < 1:
        raise InvalidBoundsError(f"steps must be >= 1, got {steps}")
    if delta < 1:
        raise InvalidBoundsError(f"delta must be >= 1, got {delta}")
    last = t_start - (steps - 1) * delta
    if last < 1:
        raise TimestepUnderflowError(
            f"chain from t={t_start} with {steps} steps of {delta} reaches t={last} < 1"
        )
    return [t_start - k * delta for k in range(steps)]
