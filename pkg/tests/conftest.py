import re

import pytest

CRITERIA = {
    1: "oracle equivalence",
    2: "gradient correctness",
    3: "residual identities",
    4: "normalisation invariants",
    5: "gradient blocking",
    6: "directional occlusion claim",
    7: "overfit sanity",
    8: "metric correctness",
    9: "schedule and determinism",
    10: "format roundtrips",
}

_outcomes = {}
_report_lines = []


def pytest_runtest_logreport(report):
    m = re.search(r"::test_criterion_(\d+)_", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        state = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        prev = _outcomes.get(n)
        if prev != "FAIL" and not (prev == "PASS" and state == "SKIP"):
            _outcomes[n] = state


@pytest.fixture
def acceptance_report():
    """Append a line to the acceptance summary printed at the end of the session."""
    return _report_lines.append


def pytest_terminal_summary(terminalreporter):
    if not _outcomes and not _report_lines:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in _outcomes:
            tr.write_line(f"criterion {n:2d} {title}: {_outcomes[n]}")
    for line in _report_lines:
        tr.write_line(line)
