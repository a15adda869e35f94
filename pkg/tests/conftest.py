import re

import numpy as np
import pytest

from smallbig.network import build_net, tiny_spec


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", nodeid)
            if m and getattr(rep, "when", "call") in ("call", "setup"):
                if outcome == "passed" and rep.when != "call":
                    continue
                label = m.group(2).replace("_", " ")
                lines.append((int(m.group(1)), f"criterion {int(m.group(1)):>2}: "
                              f"{'PASS' if outcome == 'passed' else 'FAIL'}  {label}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, text in sorted(lines):
            terminalreporter.write_line(text)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_net():
    return build_net(tiny_spec(), np.float32, seed=0)
