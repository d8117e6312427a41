import re


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::" not in report.nodeid:
                continue
            name = report.nodeid.split("::")[-1]
            match = re.match(r"test_c(\d+)[a-z]?_(\w+)", name)
            if not match:
                continue
            label = f"criterion {match.group(1)} ({name})"
            lines.append((name, f"{label}: {outcome.upper()} [{report.duration:.1f}s]"))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
