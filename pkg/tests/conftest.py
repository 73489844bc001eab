import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def mc_se_mean(x, axis=0):
    """Standard error of a sample mean."""
    x = np.asarray(x, float)
    return x.std(axis=axis, ddof=1) / np.sqrt(x.shape[axis])


def batch_means_se(x, n_batches=50):
    """Autocorrelation-robust standard error of the mean of a chain (first axis)."""
    x = np.asarray(x, float)
    n = x.shape[0] // n_batches * n_batches
    means = x[:n].reshape((n_batches, -1) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines.items()):
        terminalreporter.write_line(line)
