import numpy as np
import pytest

from begp.gp_core import GpData, GpHyperparams, KernelParams


def random_instance(rng, n=None, d=None, noise=None):
    """A random small regression problem and hyperparameters."""
    n = int(rng.integers(1, 9)) if n is None else n
    d = int(rng.integers(1, 4)) if d is None else d
    X = rng.uniform(-2.0, 2.0, size=(n, d))
    y = rng.normal(size=n)
    params = GpHyperparams(
        KernelParams(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0, size=d)),
        mean_constant=rng.normal(),
        noise_variance=rng.uniform(0.05, 0.5) if noise is None else noise,
    )
    return GpData(X, y), params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
