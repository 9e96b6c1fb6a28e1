"""Shared test configuration and the acceptance-criteria summary."""

import pytest

try:
    from hypothesis import HealthCheck, settings

    settings.register_profile(
        "suite", deadline=None, suppress_health_check=[HealthCheck.too_slow]
    )
    settings.load_profile("suite")
except ImportError:  # pragma: no cover - hypothesis is a test dependency
    pass

# criterion number -> (status, detail); filled by tests/test_acceptance.py
_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Recorder for acceptance outcomes, printed once the session ends."""

    def record(number: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE[number] = ("PASS" if passed else "FAIL", detail)

    return record


def record_acceptance_skip(number: int, detail: str) -> None:
    _ACCEPTANCE[number] = ("SKIP", detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}  {detail}")
