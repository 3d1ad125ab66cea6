import numpy as np
import pytest

from vcqr.core import Dataset, QuerySpec, build_design


def normal_quantile(p):
    """Normal quantile from mpmath, kept separate from scipy on purpose."""
    import mpmath as mp

    mp.mp.dps = 40
    return float(mp.sqrt(2) * mp.erfinv(2 * mp.mpf(p) - 1))


def normal_pdf(z):
    import mpmath as mp

    return float(mp.npdf(z))


def make_local(y, x, u=None, u0=0.0, h=10.0, tau=0.5, a_set=(0,), kernel="box"):
    """Dataset and design where every point sits in the kernel window by default."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float).reshape(len(y), -1)
    u = np.full(len(y), u0) if u is None else np.asarray(u, dtype=float)
    data = Dataset(y, u, x, a_set)
    return data, build_design(data, QuerySpec(tau, u0, h, kernel))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_problem():
    """A toy varying-coefficient problem with six covariates."""
    g = np.random.default_rng(7)
    n, p = 240, 6
    u = g.uniform(0, 2, n)
    x = g.standard_normal((n, p))
    y = x[:, 0] * (1 + u) + 0.5 * x[:, 1] + g.standard_normal(n)
    return Dataset(y, u, x, (0,))


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
