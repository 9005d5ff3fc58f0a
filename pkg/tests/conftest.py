import sys
import functools

import pytest

from dnmpc.bridge import build_scenario
from dnmpc.simulation import run_closed_loop


@functools.lru_cache(maxsize=None)
def bridge_trace(horizon: int = 6, T: int = 8):
    return run_closed_loop(build_scenario(horizon=horizon), T=T)


@pytest.fixture(scope="session")
def traces():
    return bridge_trace


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.summary_lines():
        terminalreporter.write_line(line)
