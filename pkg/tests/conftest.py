import numpy as np
import pytest

from htekit.core import GroundTruth, ObservationalDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_dataset(X, t, y, tau=None, y0=None, e=None):
    """Small helper: wrap arrays, attaching ground truth when given."""
    truth = None
    if y0 is not None:
        y0 = np.asarray(y0, float)
        truth = GroundTruth(y0, y0 + np.asarray(tau, float), e)
    return ObservationalDataset(np.asarray(X, float), np.asarray(t), np.asarray(y, float), truth=truth)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line and fail the test when the check fails."""

    def record(number, title, ok, detail):
        _VERDICTS.append((number, title, bool(ok), detail))
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_VERDICTS):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
