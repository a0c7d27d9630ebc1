import sys

import numpy as np
import pytest

from cdx.synthetic import SynthSpec, gen_fmri_cohort


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort():
    """Eight subjects, six sources on a coarse grid: fast enough for unit tests."""
    return gen_fmri_cohort(SynthSpec(n_subjects=8, shape=(10, 10, 8), t=80, n_sources=6, seed=5))


@pytest.fixture(scope="session")
def default_cohort():
    return gen_fmri_cohort(SynthSpec(seed=1))


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_"):
        return
    n = int(name.split("_")[1])
    if report.when == "call" or report.outcome != "passed":
        _ACCEPTANCE.setdefault(n, report.outcome)
        if report.outcome != "passed":
            _ACCEPTANCE[n] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    module = sys.modules.get("test_acceptance")
    details = getattr(module, "RESULTS", {})
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        outcome = _ACCEPTANCE[n]
        verdict = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
        detail = details.get(n, (None, outcome))[1]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
