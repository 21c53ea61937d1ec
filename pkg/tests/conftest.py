"""Shared fixtures and the solver audit.

Every point the solver hands back as a solution during the test run is
re-checked here with scipy's eigensolver (independent of the numpy routine
used inside the package); ``test_zz_solver_audit.py`` asserts the log is clean.
"""

import numpy as np
import pytest
import scipy.linalg
from hypothesis import HealthCheck, settings

from ratecert import sdpcore

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

AUDIT = {"checked": 0, "violations": []}
ACCEPTANCE: list[str] = []
_original_solve = sdpcore.solve_feasibility


def _audited_solve(prob, *args, **kwargs):
    res = _original_solve(prob, *args, **kwargs)
    if res.ok:
        AUDIT["checked"] += 1
        for j, blk in enumerate(prob.blocks):
            M = blk.at(res.x)
            lo = scipy.linalg.eigh(M, eigvals_only=True)[0]
            if lo < -sdpcore.PSD_TOL:
                AUDIT["violations"].append((blk.name or j, float(lo)))
        if prob.eq_matrix is not None and prob.eq_matrix.size:
            r = float(np.max(np.abs(prob.eq_matrix @ res.x - prob.eq_rhs)))
            if r > sdpcore.EQ_TOL:
                AUDIT["violations"].append(("equality", r))
        if prob.nonneg and np.min(res.x[list(prob.nonneg)]) < -sdpcore.NONNEG_TOL:
            AUDIT["violations"].append(("nonneg", float(np.min(res.x[list(prob.nonneg)]))))
    return res


sdpcore.solve_feasibility = _audited_solve


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
