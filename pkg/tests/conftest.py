import numpy as np
import pytest

from sindy_highnoise.dynsys import get_system, simulate

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def lorenz_clean():
    sys_ = get_system("lorenz")
    return simulate(sys_, [-8, 8, 27], 10.0, 0.002)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def criterion_report():
    """Callable recording one pass/fail line per acceptance criterion."""
    def report(number, ok, detail=""):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
