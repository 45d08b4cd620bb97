import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# lines collected by test_acceptance.py, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(str(k).split(".")[0]), str(k))):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
