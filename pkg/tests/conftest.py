import numpy as np
import pytest

from sindy_ekf import scenarios as S

CRITERIA_LINES: list[str] = []


@pytest.fixture
def criterion_report():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def add(label: str, ok: bool, detail: str) -> None:
        CRITERIA_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    return add


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def lv():
    return S.builtin_scenario("lotka_volterra")


@pytest.fixture(scope="session")
def selkov():
    return S.builtin_scenario("selkov")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
