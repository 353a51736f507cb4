import sys

import numpy as np
import pytest

from precise.model import ArchSpec, init_model


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def tiny_model():
    """float64 model: 3x3 images, one hidden layer, 3-d latent, 2 classes x 2 prototypes."""
    model = init_model(ArchSpec((3, 3), (5,), 3), 2, 2, seed=7, dtype=np.float64)
    model.norm_mean, model.norm_std = 0.4, 0.3
    return model


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
