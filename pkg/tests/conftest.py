import numpy as np
import pytest

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): exit criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((marker.args[0], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        status = "PASS" if outcome == "passed" else "FAIL" if outcome == "failed" else outcome.upper()
        terminalreporter.write_line(f"{status:5s} {name}")


def random_spd(rng, k, lo=0.05, hi=5.0):
    """Symmetric positive definite matrix with log-uniform eigenvalues in [lo, hi]."""
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    vals = np.exp(rng.uniform(np.log(lo), np.log(hi), size=k))
    m = (q * vals) @ q.T
    return 0.5 * (m + m.T)


def random_simplex(rng, k, alpha=0.5):
    return rng.dirichlet(np.full(k, alpha))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
