"""Shared pytest wiring: the acceptance suite's verdict lines.

Acceptance tests append one line per criterion through the ``acceptance_log``
fixture; the terminal-summary hook prints them after the run, outside
pytest's output capture, so every run shows the per-criterion verdicts.
"""
import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance_log(request):
    return request.config._acceptance_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
