import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bbmctl.scenarios import bump_profile

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bump32():
    return bump_profile(32)


@pytest.fixture(scope="session")
def bump16():
    return bump_profile(16)


def explicit_eval(coeffs, x, order=0):
    """Direct trigonometric sum (no FFT) of the order-th derivative."""
    K = (len(coeffs) - 1) // 2
    k = np.arange(-K, K + 1)
    return np.real(np.exp(1j * np.outer(x, k)) @ ((1j * k) ** order * coeffs))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; returns the pass flag."""
    def _report(number: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
