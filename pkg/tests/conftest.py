import numpy as np
import pytest

from trackproj.basis import build_basis
from trackproj.constraints import KinematicLimits
from trackproj.projection import make_workspace

LIMITS = KinematicLimits(3.0, 3.0)


@pytest.fixture(scope="session")
def basis():
    return build_basis(family="bernstein")


@pytest.fixture(scope="session")
def mono():
    return build_basis()


@pytest.fixture(scope="session")
def limits():
    return LIMITS


@pytest.fixture(scope="session")
def ws(basis):
    return make_workspace(basis, LIMITS, 20, 0.2, 100)


@pytest.fixture(scope="session")
def ws5(basis):
    return make_workspace(basis, LIMITS, 5, 0.2, 100)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, printed at the end of the run
_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_report():
    def record(criterion: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE.append((criterion, "PASS" if passed else "FAIL", detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{status} criterion {criterion:>2}: {detail}")
