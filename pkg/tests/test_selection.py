import math

import pytest

from mchmm.core.errors import ConfigError, ConvergenceError
from mchmm.core.model import EIState, ModelParams, TruncationConfig
from mchmm.core.parallel import split_workers
from mchmm.core.simulation import ObservationSeries, simulate, skeleton_sample
from mchmm.experiments.batch import run_replications
from mchmm.experiments.selection import ModelFit, bic, compare, decide
from mchmm.hmm.baum_welch import FitConfig


def test_bic_values():
    assert bic(0.0, 3, 10_000) == pytest.approx(27.631021115928547)
    assert bic(-100.0, 4, 10_000) == pytest.approx(4 * math.log(1e4) + 200.0)
    with pytest.raises(ConfigError):
        bic(-1.0, 3, 0)


def test_lower_bic_wins():
    fits = [
        ModelFit(model="lbdi", k=3, log_likelihood=-100.0, bic=bic(-100.0, 3, 1000)),
        ModelFit(model="ei", k=4, log_likelihood=-90.0, bic=bic(-90.0, 4, 1000)),
    ]
    report = decide(fits, 1000)
    assert report.winner == "ei"
    assert not report.tie
    assert report.fit_for("2").k == 4


def test_extra_parameter_needs_likelihood_gain():
    fits = [
        ModelFit(model="lbdi", k=3, log_likelihood=-100.0, bic=bic(-100.0, 3, 1000)),
        ModelFit(model="ei", k=4, log_likelihood=-99.0, bic=bic(-99.0, 4, 1000)),
    ]
    assert decide(fits, 1000).winner == "lbdi"


def test_tie_and_failure_have_no_winner():
    tie = [
        ModelFit(model="lbdi", k=3, log_likelihood=-10.0, bic=50.0),
        ModelFit(model="ei", k=4, log_likelihood=-9.0, bic=50.0),
    ]
    report = decide(tie, 100)
    assert report.tie and report.winner is None
    failed = [tie[0], ModelFit(model="ei", k=4, error="ConvergenceError: all starts failed")]
    report = decide(failed, 100)
    assert report.winner is None and not report.tie


def _fast_config(obs):
    return FitConfig(
        starts=1,
        max_iter=3,
        init_method="oracle",
        trunc=TruncationConfig(n_state=2, m_obs=max(obs.max, 2)),
    )


def test_compare_fits_both_models(reference_params):
    traj = simulate(reference_params, EIState(), 800.0, seed=12)
    _, obs = skeleton_sample(traj, 1.0)
    report = compare(obs, _fast_config(obs), chain_steps=20_000, seed=1, workers=1)
    assert [f.model for f in report.fits] == ["lbdi", "ei"]
    assert report.t_obs == len(obs)
    for f in report.fits:
        if f.error is None:
            assert f.bic == pytest.approx(bic(f.log_likelihood, f.k, len(obs)))


def test_replications_table(reference_params):
    cfg = FitConfig(starts=1, max_iter=2, init_method="oracle", trunc=TruncationConfig(n_state=2, m_obs=2))
    batch = run_replications(
        reference_params, EIState(), 300.0, cfg, replications=2, seed=3,
        mode="estimate", chain_steps=5000, workers=1,
    )
    assert list(batch.rows["replication"]) == [0, 1]
    assert (batch.rows["model"] == "ei").all()
    again = run_replications(
        reference_params, EIState(), 300.0, cfg, replications=2, seed=3,
        mode="estimate", chain_steps=5000, workers=2,
    )
    assert batch.rows.fillna(-1).equals(again.rows.fillna(-1))


def test_replications_keep_configured_emission_bound(reference_params):
    cfg = FitConfig(starts=1, max_iter=1, init_method="oracle", trunc=TruncationConfig(n_state=2, m_obs=9))
    batch = run_replications(
        reference_params, EIState(), 300.0, cfg, replications=2, seed=3,
        mode="estimate", chain_steps=5000, workers=1,
    )
    assert (batch.rows["m_obs"] == 9).all()


def test_split_workers():
    assert split_workers(5, 2) == [3, 2]
    assert split_workers(4, 2) == [2, 2]
    assert split_workers(1, 2) == [1, 1]


@pytest.mark.parametrize("workers, expected", [(6, [3, 3]), (5, [2, 3]), (1, [1, 1])])
def test_compare_shares_the_worker_budget(monkeypatch, workers, expected):
    seen = []

    def record(obs, cfg, chain_steps=None, seed=None, workers=None):
        seen.append(workers)
        raise ConvergenceError("every start failed")

    monkeypatch.setattr("mchmm.experiments.selection.estimate_parameters", record)
    obs = ObservationSeries(dt=1.0, values=[0, 1, 0, 0])
    report = compare(obs, FitConfig(), workers=workers)
    assert sorted(seen) == expected
    assert report.winner is None
    assert all(f.error.startswith("ConvergenceError") for f in report.fits)
