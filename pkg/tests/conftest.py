import numpy as np
import pytest

from cpsurv.data import Dataset


def small_dataset(n=40, seed=0, q=1, p=0, beta=0.5, eta=-1.0, zeta=0.0):
    rng = np.random.default_rng(seed)
    d = p + q
    z = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    r = z @ np.full(d, beta) + eta * z[:, -1] * (y > zeta)
    t = rng.exponential(np.exp(-r))
    c = np.minimum(rng.exponential(3.0, n), 5.0)
    status = (t <= c).astype(int)
    return Dataset.from_arrays(np.minimum(t, c), status, y, z, q=q, tau=5.0)


@pytest.fixture
def ds40():
    return small_dataset()


ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (ok, detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {detail}")
