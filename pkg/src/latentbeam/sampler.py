"""Single-step reverse transitions and clean-sample estimators.

Two solvers are supported: DDIM (stochastic for ``eta > 0``) and first-order
SDE-DPMSolver++.  Each transition is split into a deterministic *mean* (one
model call) and a noise injection (no model calls), because the search fans
out several noisy candidates from one mean.

Latents are numpy arrays of shape ``(dim,)`` or ``(n, dim)``.  Estimator
``nfe_cost`` values are per latent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import rng as rng_mod
from .errors import ConfigurationError
from .oracle import Denoiser, predict_clean
from .schedule import (
    DdimNoiseScale,
    DpmCoefficients,
    NoiseSchedule,
    ddim_noise_scale,
    dpm_lookahead_grid,
    lookahead_grid,
)


@dataclass(frozen=True, eq=False)
class TransitionMean:
    latent: np.ndarray
    source_step: int
    model_output: np.ndarray | None


@dataclass(frozen=True, eq=False)
class CleanEstimate:
    value: np.ndarray
    kind: Literal["tweedie", "lookahead"]
    nfe_cost: int


# --------------------------------------------------------------------- DDIM


def ddim_step(z, eps, abar_t, abar_prev, sigma_t):
    """Noise-free part of a DDIM update given the model output ``eps``."""
    coef = 1.0 - abar_prev - sigma_t**2
    if coef < 0.0:
        if coef < -1e-12:
            raise ConfigurationError(
                f"negative DDIM radicand 1 - abar_prev - sigma^2 = {coef:.3e}"
            )
        coef = 0.0
    x0 = predict_clean(z, eps, abar_t)
    if abar_prev == 1.0:
        return x0
    return np.sqrt(abar_prev) * x0 + np.sqrt(coef) * eps


def ddim_transition_mean(
    z, t: int, denoiser: Denoiser, schedule: NoiseSchedule, noise_scale: DdimNoiseScale, condition=None
) -> TransitionMean:
    if not (1 <= t <= schedule.T):
        raise ConfigurationError(f"transition step must lie in [1, {schedule.T}], got {t}")
    eps = denoiser.epsilon(z, t, condition)
    ab = schedule.alpha_bar
    mean = ddim_step(z, eps, ab[t], ab[t - 1], noise_scale.sigma[t])
    return TransitionMean(mean, t, eps)


def sample_candidates(mean: np.ndarray, noise_std: float, K: int, seed: int, step: int, beam: int):
    """``K`` candidates ``mean + noise_std * eps_i``, shape ``(K, dim)``.

    Candidate ``i`` draws from the stream keyed ``(seed, step, beam, i)``, so
    a candidate is the same no matter how many siblings it has or which
    worker draws it.
    """
    if noise_std < 0:
        raise ConfigurationError(f"noise standard deviation must be >= 0, got {noise_std}")
    if K < 1:
        raise ConfigurationError(f"K must be >= 1, got {K}")
    mean = np.asarray(mean, dtype=np.float64)
    out = np.repeat(mean[None, :], K, axis=0)
    if noise_std == 0.0:
        return out
    for i in range(K):
        out[i] += noise_std * rng_mod.normal(seed, (rng_mod.CANDIDATE, step, beam, i), mean.size)
    return out


def ddim_sample_candidates(mean: TransitionMean, sigma_t: float, K: int, seed: int, beam: int):
    return sample_candidates(mean.latent, sigma_t, K, seed, mean.source_step, beam)


def tweedie_estimate(z, t: int, denoiser: Denoiser, schedule: NoiseSchedule, condition=None) -> CleanEstimate:
    """One-call posterior-mean estimate; free (and exact) at ``t == 0``."""
    if t == 0:
        return CleanEstimate(np.array(z, dtype=np.float64), "tweedie", 0)
    eps = denoiser.epsilon(z, t, condition)
    return CleanEstimate(predict_clean(z, eps, schedule.alpha_bar[t]), "tweedie", 1)


def lookahead_estimate(
    z, entry_step: int, T_prime: int, denoiser: Denoiser, schedule: NoiseSchedule, condition=None
) -> CleanEstimate:
    """Deterministic DDIM from ``entry_step`` to 0 over ``lookahead_grid``.

    Each grid transition makes one model call whose clean prediction is also
    the running estimate; landing on step 0 returns that prediction without
    a further call, so the cost is ``effective_T_prime``.
    """
    grid = lookahead_grid(entry_step, T_prime).steps
    ab = schedule.alpha_bar
    x = np.array(z, dtype=np.float64)
    for cur, nxt in zip(grid[:-1], grid[1:]):
        eps = denoiser.epsilon(x, cur, condition)
        x = ddim_step(x, eps, ab[cur], ab[nxt], 0.0)
    return CleanEstimate(x, "lookahead", len(grid) - 1)


def ddim_sample(
    denoiser: Denoiser, schedule: NoiseSchedule, eta: float, z_T, seed: int, *, start: int | None = None, condition=None
):
    """Full DDIM chain from ``start`` (default ``T``) to 0 for a batch ``z_T``.

    Bulk sampler for moment checks and reference endpoints; the noise comes
    from one auxiliary stream per step, not from the per-beam search streams.
    """
    scale = ddim_noise_scale(schedule, eta)
    z = np.atleast_2d(np.asarray(z_T, dtype=np.float64)).copy()
    t0 = schedule.T if start is None else start
    for t in range(t0, 0, -1):
        mean = ddim_transition_mean(z, t, denoiser, schedule, scale, condition).latent
        s = scale.sigma[t]
        if s > 0:
            mean = mean + s * rng_mod.stream(seed, rng_mod.AUX, t, 0).standard_normal(z.shape)
        z = mean
    return z


# ----------------------------------------------------------- DPMSolver++


def _dpm_mean(z, x0, dpm: DpmCoefficients, src: int, dst: int, stochastic: bool):
    if dst == 0:
        # sigma(0) = 0: both SDE and ODE updates land on the data prediction
        return x0
    a, s = dpm.marginal_alpha, dpm.marginal_sigma
    e = np.exp(-dpm.h(src, dst))
    if stochastic:
        return (s[dst] / s[src]) * e * z + a[dst] * (1.0 - e * e) * x0
    return (s[dst] / s[src]) * z - a[dst] * (e - 1.0) * x0


def _check_order(dpm: DpmCoefficients, src: int, dst: int):
    if not (0 <= dst <= src <= dpm.T):
        raise ConfigurationError(f"DPM step must move toward 0: src={src}, dst={dst}")


def dpmpp_transition_mean(z, src: int, dst: int, denoiser: Denoiser, dpm: DpmCoefficients, condition=None) -> TransitionMean:
    """SDE-DPMSolver++ (first order) mean from ``src`` to ``dst``."""
    _check_order(dpm, src, dst)
    if src == dst:
        return TransitionMean(np.array(z, dtype=np.float64), src, None)
    eps = denoiser.epsilon(z, src, condition)
    x0 = predict_clean(z, eps, dpm.alpha_bar[src])
    return TransitionMean(_dpm_mean(z, x0, dpm, src, dst, stochastic=True), src, eps)


def dpmpp_noise_std(dpm: DpmCoefficients, src: int, dst: int) -> float:
    """Injected noise ``sigma(dst) * sqrt(1 - exp(-2h))``."""
    _check_order(dpm, src, dst)
    if src == dst or dst == 0:
        return 0.0
    h = dpm.h(src, dst)
    return float(dpm.marginal_sigma[dst] * np.sqrt(-np.expm1(-2.0 * h)))


def dpmpp_sample_candidates(mean: TransitionMean, dst: int, dpm: DpmCoefficients, K: int, seed: int, beam: int):
    std = dpmpp_noise_std(dpm, mean.source_step, dst)
    return sample_candidates(mean.latent, std, K, seed, mean.source_step, beam)


def dpmpp_jump_estimate(z, src: int, denoiser: Denoiser, dpm: DpmCoefficients, condition=None) -> CleanEstimate:
    """One-jump data-prediction estimate of the terminal (step-0) latent."""
    if src == 0:
        return CleanEstimate(np.array(z, dtype=np.float64), "tweedie", 0)
    eps = denoiser.epsilon(z, src, condition)
    x0 = predict_clean(z, eps, dpm.alpha_bar[src])
    return CleanEstimate(_dpm_mean(z, x0, dpm, src, 0, stochastic=False), "tweedie", 1)


def dpmpp_lookahead(z, entry: int, M_prime: int, denoiser: Denoiser, dpm: DpmCoefficients, condition=None) -> CleanEstimate:
    """Deterministic DPMSolver++ from ``entry`` to 0 in ``M_prime`` interpolated steps."""
    grid = dpm_lookahead_grid(entry, M_prime, dpm.T).steps
    x = np.array(z, dtype=np.float64)
    for cur, nxt in zip(grid[:-1], grid[1:]):
        eps = denoiser.epsilon(x, cur, condition)
        x0 = predict_clean(x, eps, dpm.alpha_bar[cur])
        x = _dpm_mean(x, x0, dpm, cur, nxt, stochastic=False)
    return CleanEstimate(x, "lookahead", len(grid) - 1)


def dpmpp_sample(denoiser: Denoiser, dpm: DpmCoefficients, z_T, seed: int, condition=None):
    """Full SDE-DPMSolver++ chain over every step of the schedule."""
    z = np.atleast_2d(np.asarray(z_T, dtype=np.float64)).copy()
    for src in range(dpm.T, 0, -1):
        mean = dpmpp_transition_mean(z, src, src - 1, denoiser, dpm, condition).latent
        std = dpmpp_noise_std(dpm, src, src - 1)
        if std > 0:
            mean = mean + std * rng_mod.stream(seed, rng_mod.AUX, src, 0).standard_normal(z.shape)
        z = mean
    return z
