import numpy as np
import pytest

from onlineica.coeffs import CoeffContext, Nonlinearity, Regularizer
from onlineica.model import rademacher


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cube_ctx(tau=0.1, source=None, phi=None, g_sign=-1):
    """Cube context with the calibrated sign (G = tau Q^3 (m4 - 3))."""
    return CoeffContext(Nonlinearity("cube"), phi or Regularizer(), source or rademacher(), tau, g_sign)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line per acceptance check, inline and in the session summary."""

    def emit(label: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
