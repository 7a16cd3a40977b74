import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("nccz", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("nccz")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
