import sys

import numpy as np
import pytest

from hams.core import RngStream


@pytest.fixture
def rng():
    return RngStream(12345, 0)


@pytest.fixture
def np_rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance-suite verdict lines collected during the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
