import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    verdicts = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m or (outcome == "passed" and rep.when != "call"):
                continue
            key = (int(m.group(1)), m.group(2))
            # a parametrized criterion passes only if every case does
            verdicts[key] = verdicts.get(key, True) and outcome == "passed"
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), ok in sorted(verdicts.items()):
        terminalreporter.write_line(f"criterion {num:2d} {name:<32} {'PASS' if ok else 'FAIL'}")
