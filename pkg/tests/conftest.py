import sys

import numpy as np
import pytest

from dasleak.hydraulics import PipeSpec
from dasleak.simulate import DasConfig


def pytest_terminal_summary(terminalreporter):
    """Echo acceptance verdict lines, which output capture would hide."""
    mod = (sys.modules.get("tests.test_acceptance")
           or sys.modules.get("test_acceptance"))
    for line in getattr(mod, "VERDICTS", []):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def pipe():
    return PipeSpec()


@pytest.fixture(scope="session")
def das_config():
    return DasConfig()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
