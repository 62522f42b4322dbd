import pytest

import decision_machines as dm
from decision_machines.compiler import compile_tree

from _corpus import TREE1_VALUES

ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): one acceptance criterion, reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = getattr(item, "acceptance_detail", "")
        ACCEPTANCE_RESULTS[name] = ("PASS" if report.passed else "FAIL", detail)


@pytest.fixture
def note(request):
    """Attach a one-line measurement to the acceptance summary."""
    def write(text: str) -> None:
        request.node.acceptance_detail = text
    return write


@pytest.fixture
def tree1():
    return dm.tree1()


@pytest.fixture
def machine1(tree1):
    return compile_tree(tree1)


@pytest.fixture
def numeric_machine1(machine1):
    return machine1.with_values(TREE1_VALUES)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
