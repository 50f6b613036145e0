"""Inference-time search over the reverse diffusion process.

Four strategies share one engine:

* ``bon`` -- ``B`` independent chains, keep the best final sample.
* ``greedy`` -- one beam, keep the best of ``K`` candidates at every step.
* ``dlbs`` -- keep the top ``B`` of ``K * B`` candidates at every step, each
  candidate scored through a one-step (Tweedie) clean estimate.
* ``dlbs_la`` -- as ``dlbs`` but candidates are scored through a
  ``T_prime``-step deterministic lookahead.

Random draws are addressed by ``(seed, step, beam, candidate)`` (see
:mod:`latentbeam.rng`), so with ``K == 1`` a beam search reproduces best-of-N
bit for bit, and results never depend on worker scheduling.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterator, Literal

import numpy as np

from . import rng as rng_mod
from .errors import ConfigurationError, DomainError
from .oracle import CountingDenoiser, Denoiser
from .sampler import (
    ddim_transition_mean,
    dpmpp_jump_estimate,
    dpmpp_lookahead,
    dpmpp_noise_std,
    dpmpp_transition_mean,
    lookahead_estimate,
    sample_candidates,
    tweedie_estimate,
)
from .schedule import (
    NoiseSchedule,
    ddim_noise_scale,
    dpm_coefficients,
    dpm_lookahead_grid,
    lookahead_grid,
)

log = logging.getLogger(__name__)

Method = Literal["bon", "greedy", "dlbs", "dlbs_la"]
METHODS = ("bon", "greedy", "dlbs", "dlbs_la")
SOLVERS = ("ddim", "dpmpp")

Reward = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SearchConfig:
    method: str = "dlbs"
    K: int = 1
    B: int = 1
    T_prime: int = 0
    eta: float = 1.0
    solver: str = "ddim"
    step_range: tuple[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method: unknown search method {self.method!r}")
        if self.solver not in SOLVERS:
            raise ConfigurationError(f"solver: unknown solver {self.solver!r}")
        for name in ("K", "B"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name}: must be a positive integer, got {v!r}")
        if self.method == "bon" and self.K != 1:
            raise ConfigurationError(f"K: best-of-N uses K=1, got K={self.K}")
        if self.method == "greedy" and self.B != 1:
            raise ConfigurationError(f"B: greedy search uses B=1, got B={self.B}")
        if self.method == "dlbs_la":
            if int(self.T_prime) != self.T_prime or self.T_prime < 1:
                raise ConfigurationError(f"T_prime: lookahead needs T_prime >= 1, got {self.T_prime!r}")
        if not (0.0 <= self.eta <= 1.0):
            raise ConfigurationError(f"eta: must lie in [0, 1], got {self.eta}")
        if self.step_range is not None:
            hi, lo = self.step_range
            if not (hi >= lo >= 0):
                raise ConfigurationError(f"step_range: need t_hi >= t_lo >= 0, got {self.step_range}")
            object.__setattr__(self, "step_range", (int(hi), int(lo)))
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigurationError(f"seed: must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def estimator(self) -> str:
        return "lookahead" if self.method == "dlbs_la" else "tweedie"

    def searches_at(self, t: int) -> bool:
        """Whether candidates are fanned out and selected in the step ``t -> t-1``."""
        if self.method == "bon" or t <= 1:
            return False
        if self.step_range is None:
            return True
        hi, lo = self.step_range
        return lo <= t <= hi


@dataclass
class StepTrace:
    step: int
    rewards: list[float]
    selected: list[int]


@dataclass
class SearchResult:
    best_sample: np.ndarray
    best_reward: float
    nfe: int
    wall_clock_s: float
    final_beams: np.ndarray
    final_rewards: np.ndarray
    trace: list[StepTrace] | None = None
    warnings: list[str] = field(default_factory=list)


def select_top_b(rewards, B: int) -> np.ndarray:
    """Indices of the ``B`` highest rewards, returned in ascending index order.

    Equivalent to ``B`` rounds of argmax-then-remove with ties going to the
    lower index.  Returning the survivors in index order (rather than rank
    order) keeps beam ``j`` on the same random stream when nothing is pruned.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1:
        raise ConfigurationError("rewards must be one-dimensional")
    if B < 1 or r.size < B:
        raise ConfigurationError(f"cannot select {B} beams from {r.size} candidates")
    if np.any(np.isnan(r)):
        raise DomainError("rewards contain NaN; map them to -inf first")
    order = np.argsort(-r, kind="stable")[:B]
    return np.sort(order)


def _finite_rewards(values, where: str, warnings: list[str]) -> np.ndarray:
    r = np.asarray(values, dtype=np.float64).reshape(-1)
    bad = ~np.isfinite(r)
    if bad.any():
        msg = f"{int(bad.sum())} non-finite reward(s) at {where} treated as -inf"
        log.warning(msg)
        warnings.append(msg)
        r = np.where(bad, -np.inf, r)
    return r


def _estimate_cost(config: SearchConfig, entry: int, T: int) -> int:
    if entry == 0:
        return 0
    if config.estimator == "tweedie":
        return 1
    if config.solver == "ddim":
        return lookahead_grid(entry, config.T_prime).effective_T_prime
    return dpm_lookahead_grid(entry, config.T_prime, T).effective_T_prime


def nfe_estimate(
    method: str,
    K: int,
    B: int,
    T: int,
    T_prime: int = 0,
    solver: str = "ddim",
    step_range: tuple[int, int] | None = None,
) -> int:
    """Exact number of denoiser evaluations :func:`run_search` will make.

    Every step costs ``B`` transition calls.  Each searched step ``t -> t-1``
    (``t >= 2`` and inside ``step_range``) adds ``K * B`` clean estimates at
    step ``t - 1``; a Tweedie estimate costs 1, a lookahead costs the number
    of distinct transitions on its grid.
    """
    cfg = SearchConfig(method=method, K=K, B=B, T_prime=T_prime, solver=solver, step_range=step_range)
    total = T * B
    for t in range(T, 1, -1):
        if cfg.searches_at(t):
            total += K * B * _estimate_cost(cfg, t - 1, T)
    return total


def nominal_nfe(method: str, K: int, B: int, T: int, T_prime: int = 0) -> int:
    """Per-step budget ``T * (B + K * B * cost)`` as tabulated for real video models.

    This charges the candidate estimates at every one of the ``T`` steps and
    a full ``T_prime`` calls per lookahead; it upper-bounds
    :func:`nfe_estimate` for the same configuration.
    """
    if method == "bon":
        return T * B
    cost = T_prime if method == "dlbs_la" else 1
    return T * (B + K * B * cost)


def run_search(
    config: SearchConfig,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    reward: Reward,
    *,
    condition=None,
    decode: Callable[[np.ndarray], np.ndarray] | None = None,
    trace: bool | list = False,
) -> SearchResult:
    """Run one search and return the best final sample.

    ``reward`` maps a batch ``(n, dim)`` of decoded clean samples to ``n``
    rewards.  ``decode`` defaults to the identity.  ``trace`` may be a list,
    which then receives one :class:`StepTrace` per searched step as the run
    progresses (so a failed run still leaves its partial trace).
    """
    start = time.perf_counter()
    counter = CountingDenoiser(denoiser)
    decode = decode or (lambda x: x)
    T, dim, seed = schedule.T, denoiser.dim, int(config.seed)
    K, B = int(config.K), int(config.B)
    warnings: list[str] = []
    steps: list[StepTrace] | None = trace if isinstance(trace, list) else ([] if trace else None)

    if config.solver == "ddim":
        scale = ddim_noise_scale(schedule, config.eta)
        dpm = None
    else:
        dpm = dpm_coefficients(schedule)

    def transition(z, t):
        if dpm is None:
            mean = ddim_transition_mean(z, t, counter, schedule, scale, condition).latent
            return mean, float(scale.sigma[t])
        mean = dpmpp_transition_mean(z, t, t - 1, counter, dpm, condition).latent
        return mean, dpmpp_noise_std(dpm, t, t - 1)

    def estimate(x, step):
        if config.estimator == "tweedie":
            if dpm is None:
                return tweedie_estimate(x, step, counter, schedule, condition).value
            return dpmpp_jump_estimate(x, step, counter, dpm, condition).value
        if dpm is None:
            return lookahead_estimate(x, step, config.T_prime, counter, schedule, condition).value
        return dpmpp_lookahead(x, step, config.T_prime, counter, dpm, condition).value

    z = np.stack([rng_mod.normal(seed, (rng_mod.INIT, T, j, 0), dim) for j in range(B)])
    for t in range(T, 0, -1):
        mean, std = transition(z, t)
        if config.searches_at(t):
            cand = np.concatenate([sample_candidates(mean[j], std, K, seed, t, j) for j in range(B)])
            est = estimate(cand, t - 1)
            r = _finite_rewards(reward(decode(est)), f"step {t - 1}", warnings)
            keep = select_top_b(r, B)
            z = cand[keep]
            if steps is not None:
                steps.append(StepTrace(t - 1, r.tolist(), keep.tolist()))
        else:
            z = np.concatenate([sample_candidates(mean[j], std, 1, seed, t, j) for j in range(B)])

    final = _finite_rewards(reward(decode(z)), "step 0", warnings)
    best = int(np.argmax(final))
    best_sample = z[best].copy()
    best_reward = float(np.asarray(reward(decode(best_sample[None])), dtype=np.float64).reshape(-1)[0])
    if not np.isfinite(best_reward):
        best_reward = -np.inf
    return SearchResult(
        best_sample=best_sample,
        best_reward=best_reward,
        nfe=counter.count,
        wall_clock_s=time.perf_counter() - start,
        final_beams=z,
        final_rewards=final,
        trace=steps,
        warnings=warnings,
    )


SWEEPABLE = tuple(f.name for f in fields(SearchConfig))


def sweep(
    base_config: SearchConfig,
    axes: dict[str, list],
    seeds: list[int],
    run: Callable[[SearchConfig], SearchResult],
) -> Iterator[tuple[SearchConfig, SearchResult]]:
    """Run the Cartesian product of ``axes`` and ``seeds``, yielding as completed.

    Axis names are validated (and every config built) before the first run.
    An axis may set several fields at once by using a ``"K,B"``-style name
    with tuple values, which is how fixed-budget ``K * B`` sweeps are written.
    """
    configs = list(expand_axes(base_config, axes, seeds))
    for cfg in configs:
        yield cfg, run(cfg)


def expand_axes(base_config: SearchConfig, axes: dict[str, list], seeds: list[int]) -> Iterator[SearchConfig]:
    names = list(axes)
    for name in names:
        for part in name.split(","):
            if part.strip() not in SWEEPABLE or part.strip() == "seed":
                raise ConfigurationError(f"unknown sweep axis {part.strip()!r}")
    built = []
    for combo in itertools.product(*(axes[n] for n in names)):
        updates = {}
        for name, value in zip(names, combo):
            parts = [p.strip() for p in name.split(",")]
            values = value if len(parts) > 1 else (value,)
            if len(values) != len(parts):
                raise ConfigurationError(f"axis {name!r} expects {len(parts)} values, got {value!r}")
            updates.update(dict(zip(parts, values)))
        for seed in seeds:
            built.append(replace(base_config, **updates, seed=int(seed)))
    return iter(built)


def diversity_of_results(samples, embed: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """Mean over ordered pairs ``i != j`` of ``1 - <v_i, v_j>`` for unit embeddings ``v``.

    ``embed`` maps one sample to a vector; it defaults to L2 normalisation.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise DomainError("diversity needs at least two samples")
    v = np.stack([np.asarray(embed(row), dtype=np.float64) if embed else row for row in x])
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise DomainError("zero-norm embedding")
    if embed is None:
        v = v / norms[:, None]
    sim = v @ v.T
    off = sim.sum() - np.trace(sim)
    return float((n * (n - 1) - off) / (n * (n - 1)))
