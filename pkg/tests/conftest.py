def pytest_terminal_summary(terminalreporter):
    from acceptance_runs import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
