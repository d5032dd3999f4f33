import helpers


def pytest_terminal_summary(terminalreporter):
    if not helpers.CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(helpers.CRITERIA):
        terminalreporter.write_line(helpers.CRITERIA[number])
