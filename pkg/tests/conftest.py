import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_affinity(rng, n, density=1.0):
    """Random member of the affinity set: symmetric, nonnegative, zero diagonal."""
    A = rng.random((n, n)) * (rng.random((n, n)) < density)
    A = np.triu(A, 1)
    return A + A.T


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE = {}
ACCEPTANCE_IDS = range(1, 12)


@pytest.fixture
def record():
    """``record(n, ok, detail)`` stores the one-line verdict for criterion n."""
    def _record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}", flush=True)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance.py" in rep.nodeid
              for reps in terminalreporter.stats.values() for rep in reps
              if hasattr(rep, "nodeid"))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in ACCEPTANCE_IDS:
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        else:
            terminalreporter.write_line(f"FAIL criterion {n}: no result recorded (test errored or was skipped)")
