"""Shared pytest hooks: the acceptance suite reports one line per criterion."""

ACCEPTANCE = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE[number] = line
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
