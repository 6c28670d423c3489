import os

import pytest
from hypothesis import HealthCheck, settings

from ntbip import fixtures as fx

settings.register_profile(
    "default", max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def M1():
    return fx.fixture("M1")


@pytest.fixture(scope="session")
def M2():
    return fx.fixture("M2")


@pytest.fixture(scope="session")
def M3():
    return fx.fixture("M3")


@pytest.fixture(scope="session")
def M4():
    return fx.fixture("M4")


@pytest.fixture(scope="session")
def absorbing():
    return {name: fx.absorbing(name) for name in fx.NAMES}


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, detail = RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
