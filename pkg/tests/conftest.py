"""Shared test plumbing: acceptance-criterion result collection.

Acceptance tests call ``check(criterion, description, passed, detail)``;
one PASS/FAIL line per criterion prints in the terminal summary whether or
not output capturing is on.
"""

ACCEPTANCE_RESULTS = []


def check(criterion: int, description: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS.append((criterion, description, bool(passed), detail))
    assert passed, f"acceptance criterion {criterion} failed: {description} {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for criterion, description, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {criterion} {status}: {description}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
