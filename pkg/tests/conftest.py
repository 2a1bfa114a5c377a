import numpy as np
import pytest

from gammabounds.data_model import Dataset

ACCEPTANCE_LINES: list[str] = []


def record(line: str) -> None:
    """Collect a one-line acceptance verdict for the end-of-session summary."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def synthetic(n=500, d=3, seed=0, confounded=False):
    """Small smooth observational dataset on [0, 1]^d."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    u = rng.standard_normal(n)
    logit = -0.3 + X @ np.linspace(0.8, -0.5, d) + (0.8 * (u > 0) if confounded else 0.0)
    Z = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(int)
    Y = 1.0 * Z + X @ np.linspace(1.0, 0.2, d) + 0.5 * X[:, 0] ** 2 + u
    return Dataset(X, Y, Z)


@pytest.fixture
def small_data():
    return synthetic(n=300, d=2, seed=11)
