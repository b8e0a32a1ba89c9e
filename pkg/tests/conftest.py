import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spar.model import fit_spar  # noqa: E402
from spar.nnet import TrainConfig  # noqa: E402
from spar.synthetic import stationary_tail_sample  # noqa: E402


@pytest.fixture(scope="session")
def model2d():
    """Small fitted two-dimensional model with a fixed bandwidth."""
    X = stationary_tail_sample(6000, 2, seed=11)
    return fit_spar(X, 0.1, kappa=50.0, threshold_config=TrainConfig(max_epochs=200, patience=20, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
