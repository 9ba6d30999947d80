import sys

import numpy as np
import pytest

from shelab.mollifier import Mollifier


@pytest.fixture(scope="session")
def phi():
    return Mollifier()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.LINES:
        terminalreporter.write_line(line)
