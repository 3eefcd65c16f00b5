import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fbsns.fields import Grid
from fbsns.presets import taylor_green

settings.register_profile("fbsns", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fbsns")

# (criterion number, title, passed, detail) recorded by tests/test_acceptance.py
ACCEPTANCE_LOG: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def grid2():
    return Grid(2, 32)


@pytest.fixture
def tg(grid2):
    return taylor_green(grid2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, passed, detail in sorted(ACCEPTANCE_LOG):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {num:2d}. {title}: {detail}")
