import numpy as np
import pytest

from bam import conjugate as cj


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stats(family, rng, d_feat=3, d_out=2):
    """One random batch of statistics for ``family``."""
    if family == "binomial":
        n = int(rng.integers(1, 20))
        return cj.binomial_stats(int(rng.integers(0, n + 1)), n)
    if family == "gaussian":
        return cj.gaussian_stats(rng.normal(rng.normal(), 1.0, size=int(rng.integers(1, 6))))
    rows = int(rng.integers(1, 8))
    return cj.regression_stats(rng.normal(size=(rows, d_feat)), rng.normal(size=(rows, d_out)))


def random_base(family, rng, d_feat=3, d_out=2):
    if family == "binomial":
        return cj.BetaBelief(*rng.uniform(0.5, 3.0, size=2))
    if family == "gaussian":
        return cj.GaussianBelief(rng.normal(), rng.uniform(0.3, 3.0), rng.uniform(0.3, 2.0))
    return cj.RegressionBelief(rng.normal(size=(d_out, d_feat)) * 0.3,
                               rng.uniform(0.5, 2.0) * np.eye(d_feat), rng.uniform(0.3, 1.5))


def belief_params(belief):
    """Parameters as a flat array, for tolerance comparisons."""
    if isinstance(belief, cj.BetaBelief):
        return np.array([belief.alpha, belief.beta])
    if isinstance(belief, cj.GaussianBelief):
        return np.array([belief.mean, belief.variance])
    return np.concatenate([belief.mean.ravel(), belief.precision.ravel()])


def assert_beliefs_close(a, b, rtol=1e-10, atol=0.0):
    assert type(a) is type(b)
    np.testing.assert_allclose(belief_params(a), belief_params(b), rtol=rtol, atol=atol)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
