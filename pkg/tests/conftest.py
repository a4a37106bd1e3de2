import sys

import numpy as np
import pytest

from bgformer.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def random_labels(rng, b, n_classes):
    return rng.integers(0, n_classes, size=b)


def gaussian(rng, *shape, scale=1.0):
    return rng.standard_normal(shape) * scale


@pytest.fixture
def np_rng():
    return np.random.default_rng(7)



def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
