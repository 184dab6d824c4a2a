import numpy as np
import pytest

from multinomial_mc.links import ConditionalLogitLink
from multinomial_mc.tensor import ObservationSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_observations(rng, m1, m2, K, n, full=False):
    """Random labels on uniform entries; ``full=True`` observes every entry at least once."""
    if full:
        rows, cols = np.divmod(np.arange(m1 * m2), m2)
        extra = n - rows.size
        if extra > 0:
            rows = np.concatenate([rows, rng.integers(0, m1, extra)])
            cols = np.concatenate([cols, rng.integers(0, m2, extra)])
    else:
        rows, cols = rng.integers(0, m1, n), rng.integers(0, m2, n)
    labels = rng.integers(1, K + 1, rows.size)
    return ObservationSet(m1, m2, K, rows, cols, labels)


def sample_from_tensor(rng, slices, n):
    """Observations drawn from the conditional logit model with the given slices."""
    q, m1, m2 = slices.shape
    link = ConditionalLogitLink(q + 1)
    rows, cols = rng.integers(0, m1, n), rng.integers(0, m2, n)
    probs = link.class_probabilities(slices[:, rows, cols].T)
    u = rng.random(n)
    labels = (u[:, None] >= np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1) + 1
    return ObservationSet(m1, m2, q + 1, rows, cols, labels)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
