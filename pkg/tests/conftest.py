import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def textured(rng):
    from localblur.capture_sim import textured_background
    return textured_background(rng, 96, 128)


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (number, ok, detail)."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
