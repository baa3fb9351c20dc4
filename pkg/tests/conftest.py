import numpy as np
import pytest

from mchmm.core.model import ModelParams, TruncationConfig
from mchmm.hmm.model import build_hmm
from mchmm.hmm.skeleton import EmissionTable, SkeletonMatrix, emission_support


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def reference_params():
    return ModelParams(lam=0.05, mu=0.2, alpha=0.1, nu=0.015)


@pytest.fixture
def small_trunc():
    return TruncationConfig(n_state=2, m_obs=2)


def random_hmm(rng, n_state=1, m_obs=2, ke=None):
    """Random model respecting every structural zero of the skeleton and emissions."""
    ki = n_state + 1
    ke = ki if ke is None else ke
    probs = rng.random((ke, ki, ke, ki)) + 0.05
    probs /= probs.sum(axis=(2, 3), keepdims=True)
    support = emission_support((ke, ki), m_obs)
    psi = (rng.random((ke, ki, ki, m_obs + 1)) + 0.05) * support
    psi /= psi.sum(axis=-1, keepdims=True)
    pi = rng.random((ke, ki)) + 0.05
    pi /= pi.sum()
    return build_hmm(
        SkeletonMatrix(probs=probs, corrected=True),
        EmissionTable(probs=psi, corrected=True),
        pi,
    )


def assert_rows_match_oracle(sampled, oracle, min_row_visits, z=4.0):
    """Sampled rows within z binomial errors of the oracle; thin rows equal to it."""
    visits = sampled.visits
    for e, i in np.ndindex(visits.shape):
        v = visits[e, i]
        expected = oracle.probs[e, i]
        if v < min_row_visits:
            np.testing.assert_allclose(sampled.probs[e, i], expected, atol=1e-9)
            continue
        # integer counts put a floor on the attainable error for rare targets
        tol = z * np.sqrt(expected * (1 - expected) / v) + 5.0 / v
        assert (np.abs(sampled.probs[e, i] - expected) <= tol).all(), (e, i)
