import numpy as np
import pytest

from dfmr.kernels import get_backend


@pytest.fixture(params=["numpy", "numba"])
def kern(request):
    return get_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def _report(number, name, ok, detail, seconds):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {name}: {detail} [{seconds:.1f} s]"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
