import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from pathlib import Path

import pytest


@pytest.fixture
def fixture_dir():
    return Path(__file__).parent / "fixtures"


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one verdict line per acceptance criterion, printed at the end of the run."""
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
