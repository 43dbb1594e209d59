import numpy as np
import pytest

from sbrecon.schedule import make_schedule


@pytest.fixture
def schedule():
    return make_schedule(1e-5, 0.3, 100)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", [])
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
