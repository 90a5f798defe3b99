import support


def pytest_terminal_summary(terminalreporter):
    if not support.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(support.RESULTS):
        ok, detail = support.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
