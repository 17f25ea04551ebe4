from pathlib import Path

import pytest

from cntmf.dsl import load_model

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def defi_model():
    return load_model(FIXTURES / "defi_integration.cntmf")


@pytest.fixture(scope="session")
def exchange_model():
    return load_model(FIXTURES / "exchange_hack.cntmf")


@pytest.fixture(scope="session")
def onramp_model():
    return load_model(FIXTURES / "onramp.cntmf")


_ACCEPTANCE: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_c" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, verdict in _ACCEPTANCE:
        _, num, *words = name.split("_")
        terminalreporter.write_line(f"{verdict}  criterion {int(num[1:]):>2}: {' '.join(words)}")
