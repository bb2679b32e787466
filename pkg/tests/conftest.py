import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one acceptance criterion's outcome for the end-of-run summary."""
    def record(criterion, ok, detail):
        _ACCEPTANCE[criterion] = (bool(ok), detail)
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:<4} {'PASS' if ok else 'FAIL'}  {detail}")
