"""Perceptual video-quality metrics over frame sequences, and testbed rewards.

The six metrics follow the usual VBench-style definitions (subject
consistency, motion smoothness, dynamic degree, aesthetic quality, imaging
quality, text-video consistency).  Heavy pretrained backbones are replaced by
pluggable callables: a :class:`FeatureExtractor` for embeddings, an
interpolator for frame reconstruction, a flow function for motion and
per-frame scorers for quality.  The formulas themselves are unchanged.

Frames are rows of an ``(F, d)`` array.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol

import numpy as np

from .errors import ConfigurationError, DomainError
from .oracle import GaussianMixture, _log_resp

log = logging.getLogger(__name__)

DYNAMIC_FLOOR = 1e-8
TV_FRAMES = 8


@dataclass(frozen=True, eq=False)
class FrameSequence:
    frames: np.ndarray
    value_range: float = 1.0

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        if f.ndim != 2:
            raise DomainError("frames must be an (F, d) array")
        if not np.all(np.isfinite(f)):
            raise DomainError("frames must be finite")
        if not self.value_range > 0:
            raise DomainError("value_range must be positive")
        object.__setattr__(self, "frames", f)

    @property
    def F(self) -> int:
        return self.frames.shape[0]


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise DomainError("zero-norm embedding")
    return v / n


def _text_seed(condition) -> int:
    return int.from_bytes(hashlib.sha256(str(condition).encode()).digest()[:8], "little")


class FeatureExtractor(Protocol):
    def embed(self, frame: np.ndarray) -> np.ndarray: ...

    def embed_video(self, frames: np.ndarray) -> np.ndarray: ...

    def embed_text(self, condition) -> np.ndarray: ...


class IdentityExtractor:
    """Embeds a frame as itself, normalised.

    A video embeds as the normalised mean of its frame embeddings.  A text
    condition may be given as a vector (normalised directly) or as a string,
    which is hashed to a fixed random direction of dimension ``dim``.
    """

    def __init__(self, dim: int | None = None):
        self.dim = dim

    def embed(self, frame):
        return _unit(frame)

    def embed_video(self, frames):
        return _unit(np.mean([self.embed(f) for f in np.atleast_2d(frames)], axis=0))

    def embed_text(self, condition):
        if isinstance(condition, str):
            if self.dim is None:
                raise ConfigurationError("string conditions need an extractor dimension")
            return _unit(np.random.default_rng(_text_seed(condition)).standard_normal(self.dim))
        return _unit(condition)


class RandomProjectionExtractor(IdentityExtractor):
    """Fixed seeded Gaussian projection ``d_in -> d_out`` followed by normalisation."""

    def __init__(self, d_in: int, d_out: int, seed: int = 0):
        super().__init__(d_out)
        self.weight = np.random.default_rng(seed).standard_normal((d_out, d_in)) / np.sqrt(d_in)

    def embed(self, frame):
        return _unit(self.weight @ np.asarray(frame, dtype=np.float64))

    def embed_text(self, condition):
        if isinstance(condition, str):
            return super().embed_text(condition)
        return self.embed(condition)


def subject_consistency(seq: FrameSequence, fx: FeatureExtractor) -> float:
    if seq.F < 2:
        raise DomainError("subject consistency needs at least two frames")
    d = [fx.embed(f) for f in seq.frames]
    total = 0.0
    for t in range(1, seq.F):
        total += 0.5 * (float(d[0] @ d[t]) + float(d[t - 1] @ d[t]))
    return total / (seq.F - 1)


def midpoint_interpolator(prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    return 0.5 * (prev + nxt)


def motion_smoothness(seq: FrameSequence, interpolator: Callable = midpoint_interpolator) -> float:
    """``1 - MAE / value_range`` of odd frames rebuilt from their even neighbours."""
    F = seq.F
    if F < 3 or F % 2 == 0:
        raise DomainError(f"motion smoothness needs an odd frame count >= 3, got {F}")
    f = seq.frames
    recon = np.stack([interpolator(f[i - 1], f[i + 1]) for i in range(1, F, 2)])
    mae = float(np.mean(np.abs(recon - f[1::2])))
    score = 1.0 - mae / seq.value_range
    if not 0.0 <= score <= 1.0:
        log.warning("motion smoothness %.6g outside [0, 1]; clamped", score)
        score = min(max(score, 0.0), 1.0)
    return score


def frame_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return b - a


def dynamic_degree(seq: FrameSequence, flow: Callable = frame_difference) -> float:
    """``log(sum_t ||flow_t||) / 16``; the sum is floored at 1e-8 for static clips."""
    if seq.F < 2:
        raise DomainError("dynamic degree needs at least two frames")
    f = seq.frames
    total = sum(float(np.linalg.norm(flow(f[t], f[t + 1]))) for t in range(seq.F - 1))
    return float(np.log(max(total, DYNAMIC_FLOOR)) / 16.0)


def per_frame_quality(seq: FrameSequence, scorer: Callable, scale: float) -> float:
    """Mean of ``scorer(frame) / scale``; scores outside ``[0, scale]`` are clamped."""
    if not scale > 0:
        raise DomainError("scale must be positive")
    vals = []
    for frame in seq.frames:
        s = float(scorer(frame))
        if not 0.0 <= s <= scale:
            log.warning("frame score %.6g outside [0, %g]; clamped", s, scale)
            s = min(max(s, 0.0), scale)
        vals.append(s / scale)
    return float(np.mean(vals))


def tv_frame_indices(F: int, n: int = TV_FRAMES) -> list[int]:
    """Uniform-stride subsample of ``n`` frame indices (all frames if ``F <= n``)."""
    if F <= n:
        return list(range(F))
    return [(i * F) // n for i in range(n)]


def text_video_consistency(seq: FrameSequence, condition, fx: FeatureExtractor) -> float:
    if seq.F < 1:
        raise DomainError("text-video consistency needs at least one frame")
    sub = seq.frames[tv_frame_indices(seq.F)]
    return float(_unit(fx.embed_video(sub)) @ _unit(fx.embed_text(condition)))


# ---------------------------------------------------------------- registry


@dataclass(frozen=True)
class MetricVector:
    names: tuple[str, ...]
    values: tuple[float, ...]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))


class MetricError(RuntimeError):
    def __init__(self, name: str, cause: Exception):
        super().__init__(f"{name}: {cause}")
        self.metric = name


Metric = Callable[[FrameSequence, object], float]

METRIC_NAMES = (
    "subject_consistency",
    "motion_smoothness",
    "dynamic_degree",
    "aesthetic_quality",
    "imaging_quality",
    "text_video_consistency",
)


def toy_aesthetic_scorer(frame) -> float:
    """Stand-in 0-10 rating: smooth in the frame, saturating at both ends."""
    f = np.asarray(frame, dtype=np.float64)
    return float(10.0 / (1.0 + np.exp(-f.mean() * 4.0)))


def toy_imaging_scorer(frame) -> float:
    """Stand-in 0-100 rating that drops with high-frequency energy."""
    f = np.asarray(frame, dtype=np.float64)
    rough = float(np.mean(np.abs(np.diff(f)))) if f.size > 1 else 0.0
    return float(100.0 * np.exp(-rough))


def default_registry(
    fx: FeatureExtractor,
    aesthetic: Callable = toy_aesthetic_scorer,
    imaging: Callable = toy_imaging_scorer,
    interpolator: Callable = midpoint_interpolator,
    flow: Callable = frame_difference,
) -> dict[str, Metric]:
    return {
        "subject_consistency": lambda s, c: subject_consistency(s, fx),
        "motion_smoothness": lambda s, c: motion_smoothness(s, interpolator),
        "dynamic_degree": lambda s, c: dynamic_degree(s, flow),
        "aesthetic_quality": lambda s, c: per_frame_quality(s, aesthetic, 10.0),
        "imaging_quality": lambda s, c: per_frame_quality(s, imaging, 100.0),
        "text_video_consistency": lambda s, c: text_video_consistency(s, c, fx),
    }


def metric_vector(seq: FrameSequence, condition, registry: Mapping[str, Metric]) -> MetricVector:
    names, values = [], []
    for name, fn in registry.items():
        try:
            values.append(float(fn(seq, condition)))
        except Exception as exc:
            raise MetricError(name, exc) from exc
        names.append(name)
    return MetricVector(tuple(names), tuple(values))


# ---------------------------------------------------------- testbed rewards


def testbed_reward(kind: str, **params) -> Callable[[np.ndarray], np.ndarray]:
    """Analytic reward over a batch of latents ``(n, dim)``.

    ``mode_distance``
        ``-||x - target||^2 / scale``.  With ``scale = 2 R`` the reward is
        1-Lipschitz on the ball of radius ``R / 2`` around ``target`` (and
        on any region of diameter at most ``R / 2`` containing it).
    ``component_preference``
        Posterior probability of mixture component ``component`` given ``x``
        under the data mixture ``gmm``.
    ``linear``
        ``<w, x>``; 1-Lipschitz for unit ``w``.
    """
    if kind == "mode_distance":
        target = np.asarray(params["target"], dtype=np.float64)
        scale = float(params.get("scale", 1.0))
        return lambda x: -((np.atleast_2d(x) - target) ** 2).sum(axis=1) / scale
    if kind == "component_preference":
        gmm: GaussianMixture = params["gmm"]
        k = int(params["component"])
        if not 0 <= k < gmm.n_components:
            raise ConfigurationError(f"component {k} out of range")
        return lambda x: np.exp(_log_resp(gmm, np.atleast_2d(np.asarray(x, dtype=np.float64)), 1.0)[0][:, k])
    if kind == "linear":
        w = np.asarray(params["w"], dtype=np.float64)
        return lambda x: np.atleast_2d(x) @ w
    raise ConfigurationError(f"unknown testbed reward kind {kind!r}")


testbed_reward.__test__ = False  # keep pytest from collecting it on import
