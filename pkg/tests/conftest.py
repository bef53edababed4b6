import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vigil import backend  # noqa: E402


@pytest.fixture(params=backend.available())
def kernel_backend(request):
    """Run the test once per available kernel backend."""
    with backend.use(request.param):
        yield request.param


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
