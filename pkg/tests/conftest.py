"""Re-emit acceptance checklist lines after the run.

The acceptance tests print one ``[PASS]``/``[FAIL]`` line per criterion;
default capture would swallow them for passing tests, so this hook lifts
them out of the captured stdout into the terminal summary.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for reports in terminalreporter.stats.values():
        for report in reports:
            if getattr(report, "when", None) != "call":
                continue
            for line in getattr(report, "capstdout", "").splitlines():
                if line.startswith(("[PASS]", "[FAIL]")):
                    lines.append(line)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
