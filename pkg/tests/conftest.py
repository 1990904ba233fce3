from __future__ import annotations

import pytest
from acceptance_log import LINES

from partdiss.spectral_core import make_basis


def pytest_terminal_summary(terminalreporter):
    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(LINES):
        terminalreporter.write_line(LINES[key])


@pytest.fixture(scope="session")
def small_basis():
    return make_basis(1, 16, 48)
