import numpy as np
import pytest

from sesgd.core import NetworkConfig
from sesgd.netsim import LinkModel

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def gigabit():
    """1 Gbps (125 MB/s) Ethernet with 0.1 ms latency."""
    return LinkModel(NetworkConfig(bandwidth=125e6, latency=1e-4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
