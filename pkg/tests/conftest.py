import numpy as np
import pytest
from scipy.optimize import linprog

from tswsl.measures import validate_and_normalize


def random_measure(rng, n, d, uniform=False):
    pts = rng.normal(size=(n, d))
    w = None if uniform else rng.uniform(0.05, 1.0, size=n)
    return validate_and_normalize(pts, w)


def lp_transport(a, b, C):
    """Transportation LP solved by scipy's HiGHS; an independent oracle for exact_ot."""
    n, m = C.shape
    rows = np.kron(np.eye(n), np.ones(m))
    cols = np.kron(np.ones(n), np.eye(m))
    res = linprog(C.ravel(), A_eq=np.vstack([rows, cols]), b_eq=np.r_[a, b], bounds=(0, None), method="highs")
    assert res.success
    return res.fun


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def report(label: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
