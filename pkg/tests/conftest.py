import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("hullcap", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hullcap")


@pytest.fixture
def grid64():
    from hullcap.field_core import Grid
    return Grid.box(-1.0, 1.0, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    SUMMARY = getattr(module, "SUMMARY", None)
    if SUMMARY:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(SUMMARY):
            terminalreporter.write_line(SUMMARY[cid])
