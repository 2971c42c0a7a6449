import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py::test_criterion_" not in rep.nodeid:
                continue
            props = dict(rep.user_properties)
            num = int(rep.nodeid.split("test_criterion_")[1][:2])
            lines.append((num, outcome, props.get("detail", "no result recorded")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for num, outcome, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if outcome == 'passed' else 'FAIL'}"
                                    f"  {detail}")
