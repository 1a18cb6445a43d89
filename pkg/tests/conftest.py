import numpy as np
import pytest

from portwatch.features import N_FEATURES, FeatureSet


def make_features(port, n, seed=0, start=0.0, malicious=None):
    """Count-like benign windows: Poisson columns with per-column rates."""
    rates = np.random.default_rng(port).uniform(1.0, 20.0, size=N_FEATURES)
    rng = np.random.default_rng([seed, port])
    values = rng.poisson(rates, size=(n, N_FEATURES)).astype(float)
    idx = np.arange(n)
    return FeatureSet(port, idx, start + 60.0 * idx, values, malicious)


CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[CRITERIA] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict: a PASS/FAIL line, then the assertion."""
    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
        request.config.stash[CRITERIA].append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
