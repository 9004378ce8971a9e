import pytest

# criterion number -> (verdict, summary), filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        verdict, summary = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {verdict}  {summary}")


@pytest.fixture
def record_criterion():
    def record(k: int, passed: bool, summary: str):
        verdict = "PASS" if passed else "FAIL"
        ACCEPTANCE[k] = (verdict, summary)
        print(f"criterion {k}: {verdict}  {summary}")
        return passed

    return record
