import sys
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mskqc.core import VolumeGeometry  # noqa: E402

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def geom4():
    return VolumeGeometry((4, 4, 4))


@pytest.fixture
def criterion(request):
    """Context manager that records one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[_CRITERIA]

    @contextmanager
    def check(number: int, title: str):
        detail: dict = {}
        t0 = time.perf_counter()
        status = "FAIL"
        try:
            yield detail
            status = "PASS"
        finally:
            extras = ", ".join(f"{k}={v}" for k, v in detail.items())
            line = f"criterion {number}: {status} - {title} [{extras}; {time.perf_counter() - t0:.1f}s]"
            lines.append((number, line))
            print(line)

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
