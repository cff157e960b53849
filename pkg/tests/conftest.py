import verdicts


def pytest_terminal_summary(terminalreporter):
    if not verdicts.TITLES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(verdicts.TITLES):
        ok, detail = verdicts.RESULTS.get(n, (False, "did not complete"))
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n}. {verdicts.TITLES[n]}: {detail}")
