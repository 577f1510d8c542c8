import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=200, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

EXAMPLE1_IDS = list("ABCDEFGH")
EXAMPLE1_VALUES = [15, 7, 8, 11, 5, 14, 3, 1]
EXAMPLE1_INIT = [[15], [5], [1]]

# outcome lines for the acceptance criteria, printed after the run
ACCEPTANCE_RESULTS = []


@pytest.fixture
def example1():
    return EXAMPLE1_IDS, [[v] for v in EXAMPLE1_VALUES]


@pytest.fixture
def example1_lookup():
    return {rid: [v] for rid, v in zip(EXAMPLE1_IDS, EXAMPLE1_VALUES)}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)
