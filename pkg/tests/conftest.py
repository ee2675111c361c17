import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("qctl", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("qctl")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE: list[tuple[int, str]] = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line; returns the verdict for asserting."""

    def record(number: int, title: str, passed: bool, detail: str, elapsed: float) -> bool:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail} [{elapsed:.2f} s]"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
