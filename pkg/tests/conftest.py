import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # acceptance verdicts are printed as they happen, but capture eats them
    # unless -s is given; reprint the tally once capture is torn down
    mod = (sys.modules.get("test_acceptance")
           or sys.modules.get("tests.test_acceptance"))
    lines = getattr(mod, "VERDICTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)
