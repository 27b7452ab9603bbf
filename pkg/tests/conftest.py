"""Shared pytest plumbing: surfaces acceptance verdict lines after the run."""


def pytest_configure(config):
    if not hasattr(config, "_acceptance_lines"):
        config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
