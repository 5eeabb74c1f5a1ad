import dataclasses

import pytest

from qrpnsim import FrequencyGrid, paper_system


@pytest.fixture(scope="session")
def paper():
    return paper_system()


@pytest.fixture(scope="session")
def grid():
    return FrequencyGrid.log_spaced(100.0, 1e6, 100)


def with_cavity(sys, **kw):
    return sys.replace(cavity=dataclasses.replace(sys.cavity, **kw))


def with_mech(sys, **kw):
    return sys.replace(mech=dataclasses.replace(sys.mech, **kw))


ACCEPTANCE_RESULTS = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        ACCEPTANCE_RESULTS.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
