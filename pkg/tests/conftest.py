import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

NUM_CRITERIA = 14
_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's outcome, print it, then assert it."""
    results = request.config.stash[_ACCEPTANCE]

    def record(number: int, title: str, ok: bool, detail: str = ""):
        results[number] = (title, bool(ok), detail)
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d} {title}: {detail}"
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_ACCEPTANCE]
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, NUM_CRITERIA + 1):
        if n in results:
            title, ok, detail = results[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d} {title}: {detail}")
        else:
            terminalreporter.write_line(f"[----] {n:2d} not recorded in this session (deselected or errored)")
