import os
import sys
import time

sys.path.insert(0, os.path.dirname(__file__))

SUITE_BUDGET = 600.0
_START = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    elapsed = time.perf_counter() - _START
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail, secs = results[number]
        tr.write_line(f"{status} criterion {number:>2} {title} ({secs:.2f}s) {detail}".rstrip())
    verdict = "PASS" if elapsed <= SUITE_BUDGET else "FAIL"
    tr.write_line(f"{verdict} full suite wall time {elapsed:.1f}s (budget {SUITE_BUDGET:.0f}s)")
