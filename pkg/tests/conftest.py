import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str, elapsed: float, limit: float) -> bool:
        ok = bool(passed) and elapsed < limit
        status = "PASS" if ok else "FAIL"
        ACCEPTANCE[number] = f"criterion {number:>2}: {status}  {detail}  [{elapsed:.1f}s / limit {limit:.0f}s]"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
