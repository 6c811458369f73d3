"""Collects one PASS/FAIL line per acceptance criterion and prints them after the run."""

import pytest

ACCEPTANCE: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marks = dict(report.user_properties).get("criterion")
    if marks is None:
        return
    cid, title = marks
    entry = ACCEPTANCE.setdefault(cid, {"title": title, "passed": True, "notes": []})
    props = dict(report.user_properties)
    # informative checks report their own verdict without failing the test
    passed = props["verdict"] if report.passed and "verdict" in props else report.passed
    entry["passed"] = entry["passed"] and passed
    entry["notes"].extend(v for k, v in report.user_properties if k == "note")


@pytest.fixture(autouse=True)
def _criterion_tag(request, record_property):
    mark = request.node.get_closest_marker("criterion")
    if mark is not None:
        record_property("criterion", tuple(mark.args))


@pytest.fixture
def note(record_property):
    """Attach a line of detail to the current criterion's summary."""

    def add(text: str) -> None:
        print(text)
        record_property("note", text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        entry = ACCEPTANCE[cid]
        status = "PASS" if entry["passed"] else "FAIL"
        tr.write_line(f"[{status}] {cid}: {entry['title']}")
        for text in entry["notes"]:
            tr.write_line(f"         {text}")
