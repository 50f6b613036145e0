"""Discrete noise schedules and the solver coefficients derived from them.

A schedule stores the cumulative signal coefficients ``alpha_bar[0..T]`` with
``alpha_bar[0] == 1``; the forward marginal at step ``t`` is
``z_t = sqrt(alpha_bar[t]) z_0 + sqrt(1 - alpha_bar[t]) eps``.

The continuous-time control formulation that motivates inference-time search
(drift, diffusion coefficient, optimal control term, KL temperature) has no
runtime counterpart here; only the discretised reverse process is needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = _frozen(self.alpha_bar)
        if ab.ndim != 1 or ab.size < 2:
            raise ConfigurationError("alpha_bar must be a 1-D sequence of length T+1 >= 2")
        if ab[0] != 1.0:
            raise ConfigurationError(f"alpha_bar[0] must be exactly 1, got {ab[0]!r}")
        if not np.all(np.isfinite(ab)) or np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ConfigurationError("alpha_bar entries must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0.0):
            raise ConfigurationError("alpha_bar must be strictly decreasing in t")
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    def subsample(self, T: int) -> "NoiseSchedule":
        """Every ``self.T // T``-th step, as used to run a short sampler on a
        long training schedule.  ``self.T`` must be a multiple of ``T``."""
        if T < 1 or self.T % T:
            raise ConfigurationError(f"cannot subsample {self.T} steps to {T}")
        return NoiseSchedule(self.alpha_bar[:: self.T // T])

    def to_json(self) -> str:
        return json.dumps([float(a) for a in self.alpha_bar])

    @classmethod
    def from_json(cls, text: str) -> "NoiseSchedule":
        return cls(json.loads(text))


def linear_beta_schedule(beta_start: float, beta_end: float, T: int) -> NoiseSchedule:
    """Linear-beta schedule with ``alpha_bar[t] = prod_{s<=t} (1 - beta_s)``.

    Betas are interpolated linearly over ``t = 1..T``; for ``T == 1`` the
    single beta is ``beta_start``.
    """
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if int(T) != T or T < 1:
        raise ConfigurationError(f"T must be a positive integer, got {T}")
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return NoiseSchedule(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))


@dataclass(frozen=True, eq=False)
class DdimNoiseScale:
    eta: float
    sigma: np.ndarray


def ddim_noise_scale(schedule: NoiseSchedule, eta: float) -> DdimNoiseScale:
    """Per-step injected noise ``sigma[t]`` of stochastic DDIM.

    ``sigma[t] = eta * sqrt((1 - ab[t-1]) / (1 - ab[t])) * sqrt(1 - ab[t] / ab[t-1])``,
    which equals the DDPM posterior standard deviation at ``eta = 1``.
    ``sigma[1]`` is zero because ``ab[0] == 1``; ``sigma[0]`` is unused.
    """
    if not (0.0 <= eta <= 1.0):
        raise ConfigurationError(f"eta must lie in [0, 1], got {eta}")
    ab = schedule.alpha_bar
    prev, cur = ab[:-1], ab[1:]
    sigma = eta * np.sqrt((1.0 - prev) / (1.0 - cur)) * np.sqrt(1.0 - cur / prev)
    sigma = np.concatenate([[0.0], sigma])
    if np.any(sigma[1:] ** 2 > (1.0 - prev) + 1e-15):
        raise ConfigurationError("sigma_t^2 exceeds 1 - alpha_bar[t-1]; reduce eta")
    return DdimNoiseScale(float(eta), _frozen(sigma))


@dataclass(frozen=True)
class LookaheadGrid:
    steps: tuple[int, ...]

    @property
    def effective_T_prime(self) -> int:
        return len(self.steps) - 1


def _dedup(steps) -> tuple[int, ...]:
    out: list[int] = []
    for s in steps:
        if not out or out[-1] != s:
            out.append(int(s))
    return tuple(out)


def lookahead_grid(entry_step: int, T_prime: int) -> LookaheadGrid:
    """Timesteps ``floor(s / T_prime * entry_step)`` for ``s = T_prime..0``.

    Repeated floor values (``entry_step < T_prime``) are collapsed, so the
    grid is strictly decreasing from ``entry_step`` to 0.
    """
    if entry_step < 0:
        raise ConfigurationError(f"entry_step must be >= 0, got {entry_step}")
    if T_prime < 1:
        raise ConfigurationError(f"T_prime must be >= 1, got {T_prime}")
    e, n = int(entry_step), int(T_prime)
    return LookaheadGrid(_dedup((s * e) // n for s in range(n, -1, -1)))


def dpm_lookahead_grid(entry_step: int, M_prime: int, T: int) -> LookaheadGrid:
    """Lookahead grid for the DPM solver, interpolated in solver-index space.

    Solver index ``s`` maps to timestep ``T - s``.  Index ``s~(u) =
    floor(((M'-u) s + u M) / M')`` runs from the entry index to ``M = T``;
    the result is returned as (strictly decreasing) timesteps.
    """
    if not (0 <= entry_step <= T):
        raise ConfigurationError(f"entry_step must lie in [0, {T}], got {entry_step}")
    if M_prime < 1:
        raise ConfigurationError(f"M_prime must be >= 1, got {M_prime}")
    s, m, M = T - int(entry_step), int(M_prime), int(T)
    idx = (((m - u) * s + u * M) // m for u in range(m + 1))
    return LookaheadGrid(_dedup(T - i for i in idx))


@dataclass(frozen=True, eq=False)
class DpmCoefficients:
    alpha_bar: np.ndarray
    marginal_alpha: np.ndarray
    marginal_sigma: np.ndarray
    half_log_snr: np.ndarray

    def h(self, src: int, dst: int) -> float:
        """Half-log-SNR increment from ``src`` to ``dst`` (positive when denoising)."""
        return float(self.half_log_snr[dst] - self.half_log_snr[src])

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1


def dpm_coefficients(schedule: NoiseSchedule) -> DpmCoefficients:
    ab = schedule.alpha_bar
    if np.any(ab[1:] >= 1.0):
        raise DomainError("alpha_bar[t] must be < 1 for t >= 1 (half-log-SNR would be infinite)")
    alpha = np.sqrt(ab)
    sigma = np.sqrt(1.0 - ab)
    lam = np.empty_like(ab)
    lam[0] = np.inf
    lam[1:] = 0.5 * np.log(ab[1:] / (1.0 - ab[1:]))
    return DpmCoefficients(ab, _frozen(alpha), _frozen(sigma), _frozen(lam))
