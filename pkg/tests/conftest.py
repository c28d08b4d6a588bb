import numpy as np
import pytest

import safemargin as sm

# (label, passed, detail) for each acceptance criterion, printed at the end
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(CRITERIA):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")


@pytest.fixture(scope="session")
def smib():
    return sm.build_model(sm.load_config(sm.data_path("smib.yaml")))


@pytest.fixture(scope="session")
def scalar():
    return sm.build_model(sm.load_config(sm.data_path("scalar.yaml")))


@pytest.fixture(scope="session")
def smib_config():
    return sm.load_config(sm.data_path("smib.yaml"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
