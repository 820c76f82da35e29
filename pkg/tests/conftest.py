import sys


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(results, key=lambda r: r[0]):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
