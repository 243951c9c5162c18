import numpy as np
import pytest

from blochgreen import AdditiveFunction, CoverPoint, load_fixture
from blochgreen.floquet import locate_edge


@pytest.fixture(scope="session")
def free2():
    return load_fixture("free2")


@pytest.fixture(scope="session")
def free3():
    return load_fixture("free3")


@pytest.fixture(scope="session")
def stripe2():
    return load_fixture("stripe2")


@pytest.fixture(scope="session")
def drift2():
    return load_fixture("drift2")


@pytest.fixture(scope="session")
def drift3():
    return load_fixture("drift3")


@pytest.fixture(scope="session")
def free2_edge(free2):
    return locate_edge(free2, AdditiveFunction.zero(free2), 1)


@pytest.fixture(scope="session")
def free3_edge(free3):
    return locate_edge(free3, AdditiveFunction.zero(free3), 1)


@pytest.fixture(scope="session")
def stripe2_edge(stripe2):
    return locate_edge(stripe2, AdditiveFunction.zero(stripe2), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


def pt(v, *g):
    return CoverPoint.of(v, g)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Print and record one PASS/FAIL line; returns the verdict."""

    def emit(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
