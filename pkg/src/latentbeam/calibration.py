"""Reward calibration: pick a normalised linear combination of metrics that
best correlates with preference feedback.

Weights come from a small grid (default ``{0, .25, .5, .75, 1}``).  Because
``combine`` divides by ``sum(w)``, weight vectors that are positive multiples
of one another give the same scores; each such equivalence class is scored
once and represented by its lexicographically smallest member.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import CalibrationError, ConfigurationError, DomainError

DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
TIE_TOL = 1e-12


def combine(metric_row, w) -> float | np.ndarray:
    """``sum(w_i r_i) / sum(w_i)``; accepts one row or an ``(N, M)`` matrix."""
    w = np.asarray(w, dtype=np.float64)
    r = np.asarray(metric_row, dtype=np.float64)
    if r.shape[-1] != w.size:
        raise DomainError(f"metric width {r.shape[-1]} does not match {w.size} weights")
    total = w.sum()
    if not total > 0:
        raise DomainError("weights must have a positive sum")
    out = (r @ w) / total
    return float(out) if out.ndim == 0 else out


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("pearson needs two 1-D inputs of equal length")
    if x.size < 3:
        raise DomainError(f"pearson needs N >= 3, got {x.size}")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if np.ptp(x) == 0 or np.ptp(y) == 0 or sx == 0 or sy == 0:
        raise DomainError("correlation undefined: an input has zero variance")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def significance(x, y, resamples: int = 10000, rng=None) -> float:
    """Two-sided permutation p-value for ``pearson(x, y)``.

    ``y`` is shuffled ``resamples`` times; the p-value counts permuted
    ``|r|`` at least as large as the observed one, with +1 smoothing.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = pearson(x, y)
    if resamples < 1:
        raise ConfigurationError("resamples must be >= 1")
    rng = np.random.default_rng(rng)
    xc = x - x.mean()
    xc /= np.sqrt(xc @ xc)
    yc = y - y.mean()
    yc /= np.sqrt(yc @ yc)
    count = 0
    for lo in range(0, resamples, 1000):
        n = min(1000, resamples - lo)
        perm = rng.permuted(np.tile(yc, (n, 1)), axis=1)
        count += int(np.sum(np.abs(perm @ xc) >= abs(r) - TIE_TOL))
    return (1 + count) / (1 + resamples)


@dataclass(frozen=True, eq=False)
class CalibrationDataset:
    metrics: np.ndarray
    feedback: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.metrics, dtype=np.float64))
        f = np.asarray(self.feedback, dtype=np.float64).ravel()
        if m.shape[0] != f.size:
            raise DomainError(f"{m.shape[0]} metric rows but {f.size} feedback values")
        if f.size < 3:
            raise DomainError(f"need at least 3 samples, got {f.size}")
        names = tuple(self.names) or tuple(f"m{i}" for i in range(m.shape[1]))
        if len(names) != m.shape[1]:
            raise DomainError("one name per metric column required")
        object.__setattr__(self, "metrics", m)
        object.__setattr__(self, "feedback", f)
        object.__setattr__(self, "names", names)

    @property
    def M(self) -> int:
        return self.metrics.shape[1]


@dataclass(frozen=True)
class CalibrationResult:
    weights: tuple[float, ...]
    correlation: float
    names: tuple[str, ...]
    grid: tuple[float, ...]
    p_value: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "weights": dict(zip(self.names, self.weights)),
                "correlation": self.correlation,
                "p_value": self.p_value,
                "grid": list(self.grid),
            },
            indent=2,
        )


def weight_classes(grid: Sequence[float], M: int) -> tuple[np.ndarray, int]:
    """Lexicographic-minimum representative of every scale-equivalence class.

    Returns the representatives (in lexicographic order) and the number of
    nonzero grid vectors enumerated.
    """
    values = sorted(set(float(g) for g in grid))
    if not values:
        raise ConfigurationError("weight grid is empty")
    if values[0] < 0:
        raise ConfigurationError("weight grid values must be non-negative")
    fr = [Fraction(v) for v in values]
    seen: set[tuple[Fraction, ...]] = set()
    reps: list[tuple[float, ...]] = []
    n = 0
    for idx in itertools.product(range(len(values)), repeat=M):
        total = sum(fr[i] for i in idx)
        if total == 0:
            continue
        n += 1
        key = tuple(fr[i] / total for i in idx)
        if key not in seen:  # product() is lexicographic, so the first member is the minimum
            seen.add(key)
            reps.append(tuple(values[i] for i in idx))
    if not reps:
        raise ConfigurationError("weight grid has no nonzero vector")
    return np.array(reps, dtype=np.float64), n


def class_correlations(data: CalibrationDataset, grid: Sequence[float] = DEFAULT_GRID) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation of every equivalence-class representative.

    Correlations use the centred Gram matrix, so each candidate costs
    ``O(M^2)`` regardless of the sample count.  Candidates whose combined
    score has zero variance get ``-inf``.
    """
    reps, _ = weight_classes(grid, data.M)
    X = data.metrics.copy()
    X[:, np.ptp(X, axis=0) == 0] = 0.0
    Xc = X - X.mean(axis=0)
    y = data.feedback
    if np.ptp(y) == 0:
        raise CalibrationError("feedback has zero variance; every correlation is undefined")
    yc = y - y.mean()
    S = Xc.T @ Xc
    b = Xc.T @ yc
    ny = np.sqrt(yc @ yc)
    W = reps / reps.sum(axis=1, keepdims=True)
    q = np.einsum("gi,ij,gj->g", W, S, W)
    bound = (W @ np.sqrt(np.clip(np.diag(S), 0, None))) ** 2
    ok = (q > 1e-20 * bound) & (bound > 0)
    corr = np.full(len(W), -np.inf)
    corr[ok] = np.clip((W[ok] @ b) / (np.sqrt(q[ok]) * ny), -1.0, 1.0)
    return reps, corr


def calibrate(data: CalibrationDataset, grid: Sequence[float] = DEFAULT_GRID) -> CalibrationResult:
    """Grid weight vector maximising ``pearson(combine(metrics, w), feedback)``.

    Ties within 1e-12 go to the lexicographically smallest weight vector.
    """
    reps, corr = class_correlations(data, grid)
    if not np.isfinite(corr).any():
        raise CalibrationError("every candidate weight vector gives a constant combined score")
    i = int(np.flatnonzero(corr >= corr.max() - TIE_TOL)[0])
    return CalibrationResult(
        tuple(float(v) for v in reps[i]), float(corr[i]), data.names, tuple(float(g) for g in grid)
    )


def top_candidates(data: CalibrationDataset, grid: Sequence[float] = DEFAULT_GRID, n: int = 50):
    """The ``n`` best ``(weights, correlation)`` pairs, best first, for auditing."""
    reps, corr = class_correlations(data, grid)
    order = sorted(np.flatnonzero(np.isfinite(corr)), key=lambda i: (-corr[i], tuple(reps[i])))
    return [(tuple(float(v) for v in reps[i]), float(corr[i])) for i in order[:n]]


def synthetic_feedback(metrics, w_star, noise_sd: float, rng) -> np.ndarray:
    """Hidden combination plus Gaussian noise, standing in for rater scores."""
    rng = np.random.default_rng(rng)
    clean = combine(metrics, w_star)
    return clean + noise_sd * rng.standard_normal(np.shape(clean))


def load_dataset(path) -> CalibrationDataset:
    """CSV with metric-name columns followed by a final ``feedback`` column."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigurationError(f"{path}: empty calibration file")
    header = rows[0]
    if header[-1] != "feedback":
        raise ConfigurationError(f"{path}: last column must be 'feedback', got {header[-1]!r}")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: non-numeric cell ({exc})") from None
    if body.ndim != 2 or body.shape[1] != len(header):
        raise ConfigurationError(f"{path}: ragged rows")
    return CalibrationDataset(body[:, :-1], body[:, -1], tuple(header[:-1]))


def save_dataset(data: CalibrationDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*data.names, "feedback"])
        for row, f in zip(data.metrics, data.feedback):
            w.writerow([repr(float(v)) for v in row] + [repr(float(f))])
