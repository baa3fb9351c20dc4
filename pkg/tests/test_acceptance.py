"""End-to-end checks at study scale. Minutes to hours; run with --runslow."""

import time

import numpy as np
import pytest

from conftest import assert_rows_match_oracle, random_hmm
from mchmm.config import MIN_ROW_VISITS
from mchmm.core.model import EIState, ModelParams, TruncationConfig
from mchmm.core.simulation import ObservationSeries, mc_moments, simulate, skeleton_sample
from mchmm.experiments.batch import run_replications
from mchmm.hmm.baum_welch import FitConfig, estimate_parameters
from mchmm.hmm.model import forward_backward
from mchmm.hmm.skeleton import estimate_skeleton, oracle_skeleton, simulate_skeleton
from mchmm.models.lbdi import LbdiParams

pytestmark = pytest.mark.slow


def test_monte_carlo_moments(reference_params):
    mc = mc_moments(reference_params, EIState(), 10_000.0, n_mc=10_000, seed=0)
    est = mc.estimates()
    assert 0.192 <= est["E"][0] <= 0.208
    assert 0.093 <= est["I"][0] <= 0.106
    assert 0.036 <= est["EI"][0] <= 0.048


def test_skeleton_matches_oracle(reference_params):
    trunc = TruncationConfig(n_state=3, m_obs=2)
    oracle, _ = oracle_skeleton(reference_params, trunc, 1.0)
    sampled, _ = estimate_skeleton(reference_params, trunc, 1.0, n_mc=20, seed=0, steps=50_000)
    assert_rows_match_oracle(sampled, oracle, MIN_ROW_VISITS)


def test_truncated_chain_moments(reference_params):
    skeleton, psi = oracle_skeleton(reference_params, TruncationConfig(n_state=3), 1.0)
    summary = simulate_skeleton(skeleton, psi, steps=1_000_000, seed=0).summary()
    assert 0.193 <= summary["E"][0] <= 0.211
    assert 0.092 <= summary["I"][0] <= 0.105
    assert 0.036 <= summary["EI"][0] <= 0.050


def test_full_pipeline(reference_params):
    traj = simulate(reference_params, EIState(), 10_000.0, seed=2024)
    _, obs = skeleton_sample(traj, 1.0)
    cfg = FitConfig(starts=5, trunc=TruncationConfig(n_state=3, m_obs=max(obs.max, 2)))
    result = estimate_parameters(obs, cfg)
    est = result.params.as_dict()
    assert abs(est["lambda"] - 0.05) <= 0.015
    assert abs(est["mu"] - 0.2) <= 0.035
    assert abs(est["alpha"] - 0.1) <= 0.015
    assert abs(est["nu"] - 0.015) <= 0.002


@pytest.mark.parametrize(
    "truth, expected",
    [
        (LbdiParams(lam=0.05, mu=0.5, nu=0.01), "lbdi"),
        (LbdiParams(lam=0.1, mu=0.2, nu=0.015), "lbdi"),
        (ModelParams(lam=0.05, mu=0.5, alpha=2.0, nu=0.01), "lbdi"),
        (ModelParams(lam=0.05, mu=0.2, alpha=0.1, nu=0.015), "ei"),
    ],
)
def test_selection_scenarios(truth, expected):
    cfg = FitConfig(starts=5)
    batch = run_replications(truth, EIState(), 10_000.0, cfg, replications=10, seed=1, mode="select")
    assert batch.win_counts().get(expected, 0) >= 8


def test_forward_backward_speed():
    rng = np.random.default_rng(0)
    h = random_hmm(rng, n_state=4, m_obs=3)
    obs = ObservationSeries(dt=1.0, values=rng.integers(0, 4, size=10_000))
    start = time.perf_counter()
    forward_backward(h, obs)
    assert time.perf_counter() - start < 1.0
