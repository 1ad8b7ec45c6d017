import numpy as np
import pytest

from compmarks.pattern import MarkedPattern, Window, sample_dirichlet, sample_poisson, stream

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record a PASS/FAIL line for the acceptance summary and assert on it."""

    def record(number, ok, detail):
        _CRITERIA.append((number, bool(ok), detail))
        assert ok, f"criterion {number} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_pattern(seed, intensity=120.0, D=3, alpha=None, window=None):
    """Poisson pattern with Dirichlet marks drawn from a seeded stream."""
    window = window or Window()
    rng = stream(seed, 99)
    xy = sample_poisson(intensity, window, rng)
    marks = sample_dirichlet(alpha or (4.0,) * D, rng, size=xy.shape[0])
    return MarkedPattern(xy, marks, window)


@pytest.fixture
def small_pattern():
    return random_pattern(7, intensity=80.0)
