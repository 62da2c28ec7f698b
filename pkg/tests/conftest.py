import re

import numpy as np
import pytest

from dmn_testlib import acceptance_details, acceptance_status, make_model

_CRITERION_RE = re.compile(r"test_([ps]\d+|coherence)")


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    m = _CRITERION_RE.match(report.nodeid.rsplit("::", 1)[-1])
    if not m:
        return
    key = m.group(1).upper()
    status = "PASS" if report.passed else \
        ("SKIP" if report.skipped else "FAIL")
    prev = acceptance_status.get(key)
    order = {"FAIL": 2, "PASS": 1, "SKIP": 0}
    if prev is None or order[status] > order[prev]:
        acceptance_status[key] = status


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_status:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(acceptance_status):
        details = "; ".join(acceptance_details.get(key, []))
        line = "%s %s" % (key, acceptance_status[key])
        if details:
            line += ": " + details
        terminalreporter.write_line(line)


@pytest.fixture
def toy_model():
    return make_model()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
