import numpy as np
import pytest
from pydantic import ValidationError

from conftest import random_hmm
from mchmm.core.errors import ConfigError, ConvergenceError
from mchmm.core.model import EIState, ModelParams, TruncationConfig
from mchmm.core.simulation import ObservationSeries, simulate, skeleton_sample
from mchmm.hmm.baum_welch import FitConfig, bw_step, estimate_parameters, fit, initial_hmm, run_em
from mchmm.hmm.model import build_hmm, log_likelihood
from mchmm.hmm.skeleton import EmissionTable, SkeletonMatrix, emission_support, oracle_skeleton, simulate_skeleton

NARROW = {"lambda": (0.0495, 0.0505), "mu": (0.198, 0.202), "alpha": (0.099, 0.101), "nu": (0.01485, 0.01515)}


def _sampled_obs(h, steps, seed):
    sample = simulate_skeleton(h.skeleton, h.psi, steps=steps, burn_in=50, seed=seed)
    return ObservationSeries(dt=1.0, values=sample.emissions)


@pytest.fixture
def short_obs(reference_params):
    traj = simulate(reference_params, EIState(0, 0), 1500.0, seed=21)
    _, obs = skeleton_sample(traj, 1.0)
    return obs


@pytest.fixture
def long_obs(reference_params):
    traj = simulate(reference_params, EIState(0, 0), 5000.0, seed=22)
    _, obs = skeleton_sample(traj, 1.0)
    return obs


def test_em_never_decreases_likelihood():
    rng = np.random.default_rng(10)
    for model in range(50):
        truth = random_hmm(rng, n_state=1, m_obs=2)
        obs = _sampled_obs(truth, 200, seed=model)
        h = random_hmm(rng, n_state=1, m_obs=2)
        previous = -np.inf
        for _ in range(8):
            h_next, ll = bw_step(h, obs)
            assert ll >= previous - 1e-8
            previous, h = ll, h_next
        assert log_likelihood(h, obs) >= previous - 1e-8


@pytest.mark.parametrize("weights", ["occupation", "initial"])
def test_updates_keep_structure(weights):
    rng = np.random.default_rng(11)
    h = random_hmm(rng, n_state=2, m_obs=3)
    obs = _sampled_obs(random_hmm(rng, n_state=2, m_obs=3), 300, seed=1)
    support = emission_support(h.shape, h.m_obs)
    for _ in range(5):
        h, _ = bw_step(h, obs, weights)
        np.testing.assert_allclose(h.skeleton.probs.sum(axis=(2, 3)), 1.0, atol=1e-10)
        np.testing.assert_allclose(h.dense_q().sum(axis=1), 1.0, atol=1e-10)
        np.testing.assert_allclose(h.psi.probs.sum(axis=-1), 1.0, atol=1e-10)
        assert (h.psi.probs[~support] == 0).all()
        assert h.pi.sum() == pytest.approx(1.0)


def test_config_validation():
    cfg = FitConfig()
    assert set(cfg.init_ranges) == {"lambda", "mu", "alpha", "nu"}
    with pytest.raises(ValidationError):
        FitConfig(model="seir")
    with pytest.raises(ValidationError):
        FitConfig(init_ranges={**NARROW, "mu": (0.04, 0.3)})
    with pytest.raises(ValidationError):
        FitConfig(init_ranges={**NARROW, "alpha": (0.2, 0.1)})
    with pytest.raises(ValidationError):
        FitConfig(starts=0)


def test_config_for_other_model():
    cfg = FitConfig(init_ranges=NARROW, starts=3)
    lbdi = cfg.for_model("1")
    assert lbdi.model == "lbdi"
    assert lbdi.starts == 3
    assert set(lbdi.init_ranges) == {"lambda", "mu", "nu"}
    assert lbdi.init_ranges["mu"] == NARROW["mu"]


def test_emission_bound_follows_data():
    cfg = FitConfig()
    assert cfg.with_m_obs(ObservationSeries(dt=1.0, values=[0, 1, 0])).trunc.m_obs == 2
    assert cfg.with_m_obs(ObservationSeries(dt=1.0, values=[0, 4, 0])).trunc.m_obs == 4
    wide = FitConfig(trunc=TruncationConfig(n_state=2, m_obs=9))
    assert wide.with_m_obs(ObservationSeries(dt=1.0, values=[0, 1, 2, 1])).trunc.m_obs == 9
    assert wide.with_m_obs(ObservationSeries(dt=1.0, values=[0, 11, 0])).trunc.m_obs == 11


def test_fit_from_oracle_starts(short_obs):
    cfg = FitConfig(
        starts=2,
        max_iter=6,
        init_method="oracle",
        trunc=TruncationConfig(n_state=2, m_obs=max(short_obs.max, 2)),
    )
    result = fit(short_obs, cfg, workers=1)
    assert len(result.starts) == 2
    for start in result.starts:
        assert start.error is None
        assert np.all(np.diff(start.trace) >= -1e-8 * abs(start.trace[0]))
    assert result.log_likelihood == max(s.final_log_likelihood for s in result.starts)
    report = result.to_report()
    assert report.best_start == result.best_index
    assert len(report.skeleton) == 9


def test_fit_is_reproducible(short_obs):
    cfg = FitConfig(starts=2, max_iter=3, init_method="oracle", trunc=TruncationConfig(n_state=2, m_obs=max(short_obs.max, 2)))
    a = fit(short_obs, cfg, workers=1)
    b = fit(short_obs, cfg, workers=2)
    assert [s.trace for s in a.starts] == [s.trace for s in b.starts]


def test_zero_iterations_reports_initial_model(short_obs):
    cfg = FitConfig(starts=1, max_iter=0, init_method="oracle", trunc=TruncationConfig(n_state=2, m_obs=max(short_obs.max, 2)))
    result = fit(short_obs, cfg, workers=1)
    start = result.starts[0]
    assert start.iterations == 0
    assert len(start.trace) == 1
    assert not start.converged


def test_fit_rejects_bad_inputs(short_obs):
    with pytest.raises(ConfigError):
        fit(ObservationSeries(dt=2.0, values=short_obs.values), FitConfig(), workers=1)
    with pytest.raises(ConfigError):
        fit(ObservationSeries(dt=1.0, values=[]), FitConfig(), workers=1)


def test_every_start_failing():
    cfg = FitConfig(starts=2, max_iter=2, init_method="oracle", trunc=TruncationConfig(n_state=1, m_obs=2))
    with pytest.raises(ConvergenceError):
        fit(ObservationSeries(dt=1.0, values=[0, 5, 0]), cfg, workers=1)


def test_run_em_stops_on_tolerance(short_obs):
    cfg = FitConfig(max_iter=200, tol=1e-3, init_method="oracle", trunc=TruncationConfig(n_state=1, m_obs=max(short_obs.max, 2)))
    h0 = initial_hmm(cfg.compartment_model.make_params({"lambda": 0.05, "mu": 0.2, "alpha": 0.1, "nu": 0.015}), cfg, seed=0)
    _, trace, converged = run_em(h0, short_obs, cfg)
    assert converged
    assert len(trace) < 200


def test_estimate_near_truth_from_narrow_start(long_obs):
    cfg = FitConfig(
        starts=1,
        max_iter=5,
        init_method="oracle",
        init_ranges=NARROW,
        trunc=TruncationConfig(n_state=3, m_obs=max(long_obs.max, 2)),
    )
    result = estimate_parameters(long_obs, cfg, chain_steps=200_000, seed=5, workers=1)
    start = result.fit.starts[0]
    assert start.iterations >= 1
    assert start.trace[-1] >= start.trace[0] - 1e-8
    params = result.params.as_dict()
    assert params["mu"] == pytest.approx(0.2, rel=0.3)
    assert params["alpha"] == pytest.approx(0.1, rel=0.4)
    assert 0 <= params["lambda"] < params["mu"]
    report = result.to_report()
    assert report.t_obs == len(long_obs)
    assert report.chain_steps == 200_000


def test_point_mass_model_is_a_fixed_point():
    probs = np.zeros((2, 2, 2, 2))
    probs[..., 0, 0] = 1.0
    psi = np.zeros((2, 2, 2, 3))
    psi[..., 0] = 1.0
    psi[:, 1, 0, :] = [0.0, 1.0, 0.0]
    pi = np.zeros((2, 2))
    pi[0, 0] = 1.0
    h = build_hmm(SkeletonMatrix(probs=probs, corrected=True), EmissionTable(probs=psi, corrected=True), pi)
    obs = ObservationSeries(dt=1.0, values=np.zeros(50, dtype=int))
    h_next, ll = bw_step(h, obs)
    assert ll == pytest.approx(0.0, abs=1e-12)
    for new, old in (
        (h_next.skeleton.probs, h.skeleton.probs),
        (h_next.psi.probs, h.psi.probs),
        (h_next.pi, h.pi),
        (h_next.q, h.q),
        (h_next.rho, h.rho),
    ):
        np.testing.assert_allclose(new, old, atol=1e-10)


def test_refit_recovers_generating_skeleton():
    trunc = TruncationConfig(n_state=1, m_obs=2)
    skeleton, psi = oracle_skeleton(ModelParams(lam=0.1, mu=0.5, alpha=0.5, nu=0.1), trunc, 1.0)
    sample = simulate_skeleton(skeleton, psi, steps=5000, burn_in=100, seed=3)
    obs = ObservationSeries(dt=1.0, values=sample.emissions)
    cfg = FitConfig(max_iter=200, tol=1e-10, init_method="oracle", trunc=trunc)
    h0 = initial_hmm(ModelParams(lam=0.11, mu=0.45, alpha=0.55, nu=0.09), cfg, seed=0)
    assert h0.n_hidden == 8
    h, trace, _ = run_em(h0, obs, cfg)
    assert trace[-1] > trace[0]
    visits = np.bincount(sample.states[:-1], minlength=4).reshape(2, 2)
    busy = visits >= 500
    assert busy[0, 0]
    assert np.abs(h.skeleton.probs - skeleton.probs)[busy].max() <= 0.05
