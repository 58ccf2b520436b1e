import sys

import numpy as np
import pytest

from nasgeom.synth import random_rotation


@pytest.fixture
def rot():
    """Factory for seeded orthogonal matrices."""
    return lambda dim, seed=0: random_rotation(dim, seed)


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
