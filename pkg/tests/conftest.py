import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request, capsys):
    """Context manager recording one acceptance criterion's PASS/FAIL line."""
    results = request.config.stash[_RESULTS]

    @contextmanager
    def record(number, title):
        notes = []
        status = "FAIL"
        try:
            yield notes
            status = "PASS"
        finally:
            line = f"criterion {number} {status}: {title}" + (f" ({'; '.join(notes)})" if notes else "")
            results[number] = line
            with capsys.disabled():
                print("\n" + line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if results:
        terminalreporter.section("acceptance")
        for number in sorted(results, key=str):
            terminalreporter.write_line(results[number])
