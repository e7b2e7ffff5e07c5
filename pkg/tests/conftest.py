import os

import numpy as np
import pytest

# keep the sine reference cache inside the test session
os.environ.setdefault("WPINN_CACHE", os.path.join(os.path.dirname(__file__), ".cache"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_REPORT = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Lines collected here are printed in the terminal summary."""
    return request.config.stash.setdefault(_REPORT, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
