import re

import pytest
from fastapi.testclient import TestClient

from lm_provider.finetune import fine_tune
from lm_provider.server import ProviderConfig, build_app

from provider_helpers import (BODIES, SUBJECTS, acceptance_details,
                              acceptance_status)

# acceptance-criterion bookkeeping, same rollup as the simulator suite:
# tests in test_provider named test_s1_... fold into one line per criterion
_CRITERION_RE = re.compile(r"test_(s\d+)")


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_provider" not in report.nodeid:
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
    terminalreporter.section("provider acceptance criteria")
    for key in sorted(acceptance_status):
        details = "; ".join(acceptance_details.get(key, []))
        line = "%s %s" % (key, acceptance_status[key])
        if details:
            line += ": " + details
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("models")
    subj_corpus = root / "subjects.txt"
    subj_corpus.write_text("\n".join(SUBJECTS * 20) + "\n")
    body_corpus = root / "bodies.txt"
    body_corpus.write_text("\n".join(BODIES * 20) + "\n")
    fine_tune(str(subj_corpus), "subject", str(root / "subject"),
              epochs=3, seed=0, d_embed=16, d_hidden=32)
    fine_tune(str(body_corpus), "body", str(root / "body"),
              epochs=3, seed=0, d_embed=16, d_hidden=32)
    return str(root / "subject"), str(root / "body")


@pytest.fixture(scope="session")
def client(model_dirs):
    subject_dir, body_dir = model_dirs
    app = build_app(ProviderConfig(subject_dir=subject_dir,
                                   body_dir=body_dir))
    with TestClient(app) as c:
        yield c
