import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from toydata import make_dataset, write_dataset  # noqa: E402

_criteria: dict[str, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def toy_dataset():
    return make_dataset()


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory, toy_dataset):
    return write_dataset(toy_dataset, tmp_path_factory.mktemp("toy"), per_class_every=5)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or "::test_ac" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        doc = getattr(report, "criterion", "")
        _criteria[name] = ("PASS" if report.outcome == "passed" else "FAIL", doc)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    doc = (item.function.__doc__ or "").strip().splitlines()
    rep.criterion = doc[0] if doc else ""


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        status, doc = _criteria[name]
        terminalreporter.write_line(f"{status}  {name}  {doc}")
