"""Denoiser interface and the analytic Gaussian-mixture oracle.

Under the variance-preserving forward process a mixture of isotropic
Gaussians stays a mixture of isotropic Gaussians, so the posterior mean
``E[z_0 | z_t]``, the score and the optimal noise prediction are available in
closed form.  ``GmmDenoiser`` exposes that noise prediction through the same
interface a trained network would use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import DomainError
from .schedule import NoiseSchedule


@runtime_checkable
class Denoiser(Protocol):
    """Noise prediction as a pure function of (latent, timestep).

    ``z`` is either a single latent of shape ``(dim,)`` or a batch of shape
    ``(n, dim)``; a batch of ``n`` latents costs ``n`` function evaluations.
    """

    dim: int

    def epsilon(self, z: np.ndarray, t: int, condition=None) -> np.ndarray: ...


def predict_clean(z, eps, abar):
    """Clean-sample estimate ``(z - sqrt(1 - abar) eps) / sqrt(abar)``."""
    return (z - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)


def predict_epsilon(z, clean, abar):
    """Inverse of :func:`predict_clean` for ``abar < 1``."""
    return (z - np.sqrt(abar) * clean) / np.sqrt(1.0 - abar)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Mixture of isotropic Gaussians ``sum_k w_k N(mu_k, v_k I)``."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        v = np.array(self.variances, dtype=np.float64).reshape(-1)
        if not (w.size == mu.shape[0] == v.size) or w.size == 0:
            raise DomainError("weights, means and variances must have matching lengths")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be non-negative and sum to 1")
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise DomainError("variances must be strictly positive")
        if not np.all(np.isfinite(mu)):
            raise DomainError("means must be finite")
        for name, arr in (("weights", w), ("means", mu), ("variances", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        m = self.mean()
        centred = self.means - m
        return (centred.T * self.weights) @ centred + np.eye(self.dim) * (self.weights @ self.variances)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianMixture":
        return cls(data["weights"], data["means"], data["variances"])


def _check_abar(abar, allow_one=True):
    upper_ok = abar <= 1.0 if allow_one else abar < 1.0
    if not (abar > 0.0 and upper_ok):
        rng = "(0, 1]" if allow_one else "(0, 1)"
        raise DomainError(f"abar must lie in {rng}, got {abar}")


def gmm_marginal(gmm: GaussianMixture, abar: float) -> GaussianMixture:
    _check_abar(abar)
    if abar == 1.0:
        return gmm
    return GaussianMixture(
        gmm.weights,
        np.sqrt(abar) * gmm.means,
        abar * gmm.variances + (1.0 - abar),
    )


def _log_resp(gmm: GaussianMixture, z: np.ndarray, abar: float):
    """Normalised log responsibilities under the step-``abar`` marginal."""
    means = np.sqrt(abar) * gmm.means
    var = abar * gmm.variances + (1.0 - abar)
    sq = ((z[:, None, :] - means[None, :, :]) ** 2).sum(-1)
    with np.errstate(divide="ignore"):
        logw = np.log(gmm.weights)
    logp = logw - 0.5 * gmm.dim * np.log(2 * np.pi * var) - 0.5 * sq / var
    top = logp.max(axis=1, keepdims=True)
    lse = top + np.log(np.exp(logp - top).sum(axis=1, keepdims=True))
    return logp - lse, lse[:, 0], means, var


def _batch(z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    return (z[None, :], True) if z.ndim == 1 else (z, False)


def gmm_log_density(gmm: GaussianMixture, z, abar: float):
    _check_abar(abar)
    zb, single = _batch(z)
    _, lse, _, _ = _log_resp(gmm, zb, abar)
    return lse[0] if single else lse


def _raw_posterior_mean(gmm, zb, abar):
    logr, _, means, var = _log_resp(gmm, zb, abar)
    r = np.exp(logr)
    gain = np.sqrt(abar) * gmm.variances / var
    comp = gmm.means[None] + gain[None, :, None] * (zb[:, None, :] - means[None])
    return (r[:, :, None] * comp).sum(axis=1)


def gmm_posterior_mean(gmm: GaussianMixture, z, abar: float):
    """Exact ``E[z_0 | z_t = z]`` for the mixture at noise level ``abar``.

    For ``abar < 1`` the closed-form mean is passed once through the noise
    parameterisation (:func:`predict_epsilon` then :func:`predict_clean`), so
    the value is bit-identical to what a sampler recovers from
    :func:`gmm_epsilon`.
    """
    _check_abar(abar)
    zb, single = _batch(z)
    if abar == 1.0:
        out = zb.copy()
    else:
        eps = predict_epsilon(zb, _raw_posterior_mean(gmm, zb, abar), abar)
        out = predict_clean(zb, eps, abar)
    return out[0] if single else out


def gmm_epsilon(gmm: GaussianMixture, z, abar: float):
    """Optimal noise prediction ``(z - sqrt(abar) E[z_0|z]) / sqrt(1 - abar)``."""
    _check_abar(abar, allow_one=False)
    zb, single = _batch(z)
    eps = predict_epsilon(zb, _raw_posterior_mean(gmm, zb, abar), abar)
    return eps[0] if single else eps


def gmm_score(gmm: GaussianMixture, z, abar: float):
    """Exact gradient of the log marginal density at ``z``."""
    _check_abar(abar)
    zb, single = _batch(z)
    logr, _, means, var = _log_resp(gmm, zb, abar)
    r = np.exp(logr)
    per = (means[None] - zb[:, None, :]) / var[None, :, None]
    out = (r[:, :, None] * per).sum(axis=1)
    return out[0] if single else out


def gmm_exact_sample(gmm: GaussianMixture, rng: np.random.Generator, n: int | None = None):
    """Draw from the data mixture; returns shape ``(dim,)`` or ``(n, dim)``."""
    size = 1 if n is None else int(n)
    comp = rng.choice(gmm.n_components, size=size, p=gmm.weights)
    noise = rng.standard_normal((size, gmm.dim))
    x = gmm.means[comp] + np.sqrt(gmm.variances[comp])[:, None] * noise
    return x[0] if n is None else x


class GmmDenoiser:
    """Exact noise predictor for a Gaussian mixture under a fixed schedule."""

    def __init__(self, gmm: GaussianMixture, schedule: NoiseSchedule):
        self.gmm = gmm
        self.schedule = schedule
        self.dim = gmm.dim

    def epsilon(self, z, t, condition=None):
        if not (1 <= t <= self.schedule.T):
            raise DomainError(f"noise prediction undefined at timestep {t}")
        return gmm_epsilon(self.gmm, z, float(self.schedule.alpha_bar[t]))


class CountingDenoiser:
    """Wraps a denoiser and counts function evaluations (one per latent)."""

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self.dim = inner.dim
        self.count = 0

    def epsilon(self, z, t, condition=None):
        z = np.asarray(z)
        self.count += 1 if z.ndim == 1 else z.shape[0]
        return self.inner.epsilon(z, t, condition)
