import pytest

CRITERIA = {
    1: "strong duality on the reference problems",
    2: "structure certificate residuals",
    3: "min-cut oracle equivalence",
    4: "reference energy values",
    5: "comparison principle",
    6: "stability under increasing obstacles",
    7: "barrier condition verdicts",
    8: "fitted Hoelder exponents",
    9: "unit invariants and suite runtime",
}

_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number = marker.args[0]
    if report.failed or report.skipped:
        _outcomes[number] = False
    elif report.when == "call":
        _outcomes.setdefault(number, True)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        verdict = "PASS" if _outcomes[number] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {CRITERIA[number]}")
