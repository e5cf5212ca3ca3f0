import pytest

ACCEPTANCE_KEY = pytest.StashKey[dict]()

CRITERIA = {
    1: "linearized dispersion",
    2: "stationarity",
    3: "maximum principles",
    4: "bottom contact band",
    5: "epsilon continuation rate",
    6: "identity suite",
    7: "form equivalence",
    8: "inequality sweep",
    9: "stability envelope",
    10: "consistency limits",
}


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record ``(passed, detail)`` for an acceptance criterion number."""
    results = request.config.stash[ACCEPTANCE_KEY]

    def record(number, passed, detail):
        results[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        if number in results:
            passed, detail = results[number]
            status = "PASS" if passed else "FAIL"
        else:
            status, detail = "FAIL", "(no result recorded: errored or deselected)"
        terminalreporter.write_line(f"ACCEPTANCE {number:2d} {title}: {status}  {detail}")
