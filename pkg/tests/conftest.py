"""Shared fixtures. Acceptance tests register one verdict line per criterion;
the lines are repeated in the terminal summary so they are easy to find."""

import pytest

CRITERIA: dict[int, str] = {}


class CriterionRecorder:
    def __call__(self, number: int, passed: bool, detail: str) -> None:
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        CRITERIA[number] = line
        print(line)
        assert passed, line


@pytest.fixture
def criterion():
    return CriterionRecorder()


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
