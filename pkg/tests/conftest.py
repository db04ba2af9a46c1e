import sys

import numpy as np
import pytest

from emptyroom.tensor_core import Rng


@pytest.fixture
def rng():
    return Rng(12345)


def soft_map(rng, shape):
    z = rng.normal(shape, 0.0, 1.0)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
