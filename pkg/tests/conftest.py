from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"

settings.register_profile("xbar", deadline=None, max_examples=40)
settings.load_profile("xbar")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def load_micro_cnn(parasitics=None, seed=0):
    """``(NetworkSpec, weights)`` for the checked-in three-layer micro-CNN."""
    from xbarsim.circuit import ParasiticParams
    from xbarsim.formats import load_kernel, parse_network
    from xbarsim.network import NetworkSpec

    shape, layers, paths = parse_network(FIXTURES / "micro_cnn" / "network.txt")
    p = ParasiticParams() if parasitics is None else parasitics
    ns = NetworkSpec(shape, layers, parasitics=p, seed=seed, clamp=True)
    return ns, {i: load_kernel(path) for i, path in paths.items()}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
