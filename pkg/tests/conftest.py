"""Per-criterion acceptance summary.

Tests tagged ``@pytest.mark.criterion(n)`` are grouped by ``n``; a criterion
passes only if every test in its group passed. One line per criterion is
printed at the end of the session.
"""
from collections import defaultdict

import pytest

TITLES = {
    1: "gradient suite vs central differences, < 1e-4, < 5 min",
    2: "loss identities at stated tolerances",
    3: "attention normalisation",
    4: "partial-measure decomposition",
    5: "ordering reproduction on the synthetic benchmark",
    6: "now-model accuracy >= 0.90 and nMAE <= 15%",
    7: "oracle equivalences",
    8: "determinism of checkpoints, logs and reports",
}

_outcomes = defaultdict(list)
_notes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


@pytest.fixture
def note(request):
    """Attach a short measured value to the test's criterion line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            _notes[marker.args[0]].append(text)
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes[marker.args[0]].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(TITLES):
        if n not in _outcomes:
            continue
        status = "PASS" if all(_outcomes[n]) else "FAIL"
        detail = "; ".join(_notes[n])
        terminalreporter.write_line(f"criterion {n}: {status}  {TITLES[n]}" + (f"  [{detail}]" if detail else ""))
