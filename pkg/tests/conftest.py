import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> {"title": str, "passed": bool, "notes": [str]}
_CRITERIA: dict[int, dict] = {}


@pytest.fixture
def note(request):
    """Attach a measured value to the acceptance summary line."""

    def add(text):
        request.node.user_properties.append(("note", str(text)))

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "notes": []})
    entry["passed"] &= rep.passed
    if rep.when == "call":
        entry["notes"] += [v for k, v in item.user_properties if k == "note"]
        if rep.failed:
            entry["notes"].append(f"{item.name} failed: {rep.longrepr.reprcrash.message if hasattr(rep.longrepr, 'reprcrash') else rep.longrepr}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        tr.write_line(f"{'PASS' if entry['passed'] else 'FAIL'} criterion {number}: {entry['title']}")
        for text in entry["notes"]:
            tr.write_line(f"    {text}")
