import re

CRITERIA = {
    "1": "delivery ordering under attack, ratio >= 1.5, sweep < 10 min",
    "2": "delay: ESRPSDC slower at low fractions, faster past a crossover",
    "3": "energy <= 0.7x both baselines at 30% attack",
    "4": "single-sinkhole detection >= 95/100, benign suspects 0",
    "5": "oracle equivalence: threshold, localisation, conservation, replay",
    "6": "structural invariants over 50 seeds",
}

_outcomes = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d)(\w*)", report.nodeid)
    if not m:
        return
    if report.when == "call" or report.failed or report.skipped:
        name = "criterion " + m.group(1) + m.group(2)
        prev = _outcomes.get(name)
        if prev in ("failed", "error"):
            return
        _outcomes[name] = "error" if report.failed and report.when != "call" else report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key, label in CRITERIA.items():
        parts = {n: o for n, o in _outcomes.items() if re.match(rf"criterion {key}(\D|$)", n)}
        if not parts:
            continue
        ok = all(o == "passed" for o in parts.values())
        detail = ", ".join(f"{n.split(' ', 1)[1]}={o}" for n, o in sorted(parts.items()))
        tr.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {label} [{detail}]")
