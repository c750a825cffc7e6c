import re

import numpy as np
import pytest

from delmdp.mdp import Mdp

M2_P = np.array([[[0.9, 0.1], [0.1, 0.9]], [[0.1, 0.9], [0.9, 0.1]]])
M2_R = np.array([[0.0, 0.0], [1.0, 0.0]])
STAY, GO = 0, 1


def make_m2(embed=True):
    if embed:
        return Mdp(M2_P, M2_R, np.array([[0.0], [1.0]]), np.array([[0.0], [1.0]]))
    return Mdp(M2_P, M2_R)


@pytest.fixture
def m2():
    return make_m2()


_CRITERION = re.compile(r"test_criterion_(\d+)")
_results = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _results[n] = (report.outcome, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        outcome, dur = _results[n]
        verdict = "PASS" if outcome == "passed" else "FAIL" if outcome == "failed" else outcome.upper()
        terminalreporter.write_line(f"criterion {n:2d}: {verdict} ({dur:.2f} s)")
