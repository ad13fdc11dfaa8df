import numpy as np
import pytest

from trimmfa.model import MfaParams


def random_params(rng, G=3, p=6, d=2, scale=1.0):
    w = rng.dirichlet(np.ones(G) * 2)
    means = rng.normal(scale=5 * scale, size=(G, p))
    loadings = rng.normal(scale=scale, size=(G, p, d))
    noise = rng.uniform(0.1, 1.0, size=(G, p)) * scale**2
    return MfaParams(w, means, loadings, noise)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
