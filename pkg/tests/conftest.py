"""Print one line per acceptance criterion at the end of the session."""


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            for key, value in getattr(rep, "user_properties", []):
                if key == "acceptance":
                    lines.append((value, outcome))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for value, outcome in sorted(lines, key=lambda item: int(item[0].split(" ", 1)[0][1:])):
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {value}")
