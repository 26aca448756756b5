import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_qubit(rng):
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return v / np.linalg.norm(v)


def random_state(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the lines are printed together at the end of the run."""
    def report(k, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}"
        _CRITERIA[k] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
