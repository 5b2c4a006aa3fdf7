import re

import pytest

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    rows = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and outcome == "passed":
                continue
            n = int(m.group(1))
            label = "PASS" if outcome == "passed" else outcome.upper()
            rows[n] = (label, m.group(2).replace("_", " "), getattr(rep, "duration", 0.0))
    if not rows:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(rows):
        label, name, secs = rows[n]
        terminalreporter.write_line(f"criterion {n:2d}: {label:7s} {name} ({secs:.1f} s)")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
