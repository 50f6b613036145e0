import numpy as np
import pytest

from latentbeam.oracle import GaussianMixture, GmmDenoiser
from latentbeam.schedule import linear_beta_schedule


@pytest.fixture(scope="session")
def schedule():
    """Default 1000-step linear schedule subsampled to 50 sampler steps."""
    return linear_beta_schedule(1e-4, 2e-2, 1000).subsample(50)


@pytest.fixture(scope="session")
def gmm2():
    return GaussianMixture([0.3, 0.7], [[-1.5, 0.5], [1.0, -0.25]], [0.2, 0.05])


@pytest.fixture(scope="session")
def denoiser2(gmm2, schedule):
    return GmmDenoiser(gmm2, schedule)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Records one acceptance line, then asserts the outcome."""

    def check(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE_KEY].append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
