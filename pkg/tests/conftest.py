import pytest

VERDICTS = {}


@pytest.fixture
def verdict():
    """``verdict(key, ok, detail)`` records one acceptance line per criterion."""
    def record(key, ok, detail=""):
        VERDICTS[key] = f"{'PASS' if ok else 'FAIL'}  {key}  {detail}".rstrip()
        print(VERDICTS[key])
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[key])
