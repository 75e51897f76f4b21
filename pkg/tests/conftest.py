import numpy as np
import pytest
from hypothesis import HealthCheck, settings

ACCEPTANCE_LINES = pytest.StashKey[list]()

settings.register_profile("rdbounds", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("rdbounds")


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
