import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES = []


def record(criterion, description, passed, detail=""):
    """Log one acceptance line (shown in the terminal summary) and return ``passed``."""
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] criterion {criterion}: {description}"
    if detail:
        line += f" | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
