import numpy as np
import pytest

from fedkci import data

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """Log one acceptance line; printed in the terminal summary."""

    def _record(criterion: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE.append((criterion, passed, detail))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}  {detail}")


@pytest.fixture
def balanced_50k():
    """50,000 samples, 10 balanced classes, trivial 1-d inputs (index arithmetic only)."""
    return data.Dataset(np.zeros((50_000, 1), dtype=np.float32), np.arange(50_000) % 10, 10)


@pytest.fixture(scope="session")
def small_blobs():
    full = data.make_synthetic(4, 60, 6, 4.0, seed=3)
    return data.train_test_split(full, 10, seed=3)
