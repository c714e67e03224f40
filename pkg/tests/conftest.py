import numpy as np
import pytest

from noma_wsr.channel import ChannelConfig, generate_instance
from noma_wsr.model import carrier_view, decoding_order

_LINES = []


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line[1])


@pytest.fixture
def record():
    """Log one pass/fail line for an acceptance criterion."""

    def _record(number: int, name: str, passed: bool, detail: str):
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _LINES.append((number, line))
        print(line)
        return passed

    return _record


def table_view(seed: int, K: int, M: int = 1, n: int = 0, substream: int = 0):
    """A single-carrier view drawn from the default channel model."""
    inst = generate_instance(ChannelConfig(seed=seed), K, M, substream=substream)
    return inst, carrier_view(inst, decoding_order(inst), n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
