import numpy as np
import pytest

from multitime_ft.scenarios import make_rng


@pytest.fixture
def rng():
    return make_rng(20240611)


def assert_close(a, b, tol):
    a = np.asarray(a)
    b = np.asarray(b)
    gap = float(np.max(np.abs(a - b))) if a.size else 0.0
    assert gap <= tol, f"max deviation {gap:.3e} > {tol:.1e}"


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion():
    """Record ``(number, ok, detail)`` for the acceptance summary."""

    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE_LINES[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        ok, detail = ACCEPTANCE_LINES[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
