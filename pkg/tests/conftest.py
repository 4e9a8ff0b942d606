import pytest

# Filled by the acceptance suite; printed once at the end of the session.
CRITERIA_LINES: list[str] = []


@pytest.fixture
def report():
    def _report(number: int, title: str, ok: bool, elapsed: float, limit: float | None, detail: str = "") -> None:
        within = limit is None or elapsed < limit
        bound = "" if limit is None else f" (limit {limit:g}s)"
        status = "PASS" if ok and within else "FAIL"
        line = f"[{status}] criterion {number}: {title}: {detail} [{elapsed:.1f}s{bound}]"
        CRITERIA_LINES.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
