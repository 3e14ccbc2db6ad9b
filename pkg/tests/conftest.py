"""Per-criterion pass/fail summary for the acceptance suite."""

CRITERIA = {
    1: "conservation",
    2: "poisson and potential",
    3: "convergence-rate oracle",
    4: "transport identity and inverse",
    5: "pushforward",
    6: "contraction headline",
    7: "monotonicity sweep",
    8: "diagnostics",
    9: "determinism",
}

_criterion_of = {}
_outcomes = {}
_details = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criterion_of[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    n = _criterion_of.get(report.nodeid)
    if n is None:
        return
    if report.when == "call" or report.outcome != "passed":
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        prev = _outcomes.get(n)
        if prev != "FAIL":
            _outcomes[n] = outcome if prev in (None, "PASS") else prev
        for key, value in report.user_properties:
            if key == "detail":
                _details.setdefault(n, []).append(str(value))


def pytest_terminal_summary(terminalreporter):
    if not _criterion_of:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        outcome = _outcomes.get(n, "NOT RUN")
        detail = "; ".join(_details.get(n, []))
        tr.write_line(f"criterion {n} {outcome:<7} {title}" + (f": {detail}" if detail else ""))
