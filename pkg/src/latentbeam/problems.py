"""Named analytic testbed problems.

Each preset is a Gaussian mixture with small component variances plus a
default mode-distance target.  They are built so that one-step clean
estimates at high noise are blends of several modes, which is what makes
the choice of search strategy matter.

* ``bimodal-1d``: unequal modes at -2 and 2, target 0.5 between them.
* ``straddle-2d``: two heavy modes on the x-axis whose blend sits on the
  target, and a light mode above it.
* ``ring-8``: eight equal modes on a circle of radius 3, target inside.
* ``decoy-1d``: heavy modes at 0 and 2 whose blend mimics the target at 1;
  the light mode at 1.3 is the real best outcome.
* ``trap-2d``: a 1% mode next to the target, flanked by two heavy modes.
* ``needle-reward-16d``: six modes at fixed pseudo-random points in 16-d,
  target on the rarest one.

The first five make up the standard suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .oracle import GaussianMixture


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    gmm: GaussianMixture
    target: np.ndarray


def _ring(n: int, radius: float) -> list[list[float]]:
    return [[radius * np.cos(2 * np.pi * k / n), radius * np.sin(2 * np.pi * k / n)] for k in range(n)]


def _needle_means() -> list[list[float]]:
    return (1.5 * np.random.default_rng(3).standard_normal((6, 16))).tolist()


_NEEDLE = _needle_means()

_PRESETS = {
    "bimodal-1d": (([0.7, 0.3], [[-2.0], [2.0]], [1e-3, 1e-3]), [0.5]),
    "straddle-2d": (([0.45, 0.45, 0.1], [[-2.0, 0.0], [2.0, 0.0], [0.0, 1.5]], [1e-4] * 3), [0.0, 0.0]),
    "ring-8": (([1 / 8] * 8, _ring(8, 3.0), [1e-4] * 8), [0.5, 0.2]),
    "decoy-1d": (([0.45, 0.1, 0.45], [[0.0], [1.3], [2.0]], [1e-4] * 3), [1.0]),
    "trap-2d": (([0.495, 0.495, 0.01], [[-1.0, 0.0], [1.0, 0.0], [0.0, 0.3]], [1e-4] * 3), [0.0, 0.3]),
    "needle-reward-16d": (([0.3, 0.25, 0.2, 0.15, 0.07, 0.03], _NEEDLE, [1e-3] * 6), _NEEDLE[5]),
}

PRESETS = tuple(_PRESETS)
STANDARD_SUITE = PRESETS[:5]
# the problem whose early one-step estimates are most misleading
LOOKAHEAD_PROBLEM = "decoy-1d"


def preset(name: str) -> Problem:
    try:
        (w, mu, var), target = _PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; presets: {', '.join(PRESETS)}") from None
    return Problem(name, GaussianMixture(w, mu, var), np.array(target, dtype=np.float64))

