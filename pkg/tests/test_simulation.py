import numpy as np
import pytest

from mchmm.core.errors import ConfigError
from mchmm.core.model import EIState, EventKind, ModelParams
from mchmm.core.simulation import (
    ObservationSeries,
    Trajectory,
    mc_moments,
    simulate,
    skeleton_sample,
)


def test_same_seed_same_path(reference_params):
    a = simulate(reference_params, EIState(0, 0), 500.0, seed=7)
    b = simulate(reference_params, EIState(0, 0), 500.0, seed=7)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.kinds, b.kinds)
    c = simulate(reference_params, EIState(0, 0), 500.0, seed=8)
    assert len(c) != len(a) or not np.array_equal(c.times, a.times)


def test_path_is_consistent(reference_params):
    traj = simulate(reference_params, EIState(1, 2), 2000.0, seed=3)
    assert np.all(np.diff(traj.times) > 0)
    assert traj.times[-1] <= 2000.0
    assert (traj.e >= 0).all() and (traj.i >= 0).all()
    prev_e = np.concatenate([[1], traj.e[:-1]])
    prev_i = np.concatenate([[2], traj.i[:-1]])
    steps = {
        EventKind.EXPOSURE: (1, 0),
        EventKind.INCUBATION: (-1, 1),
        EventKind.ISOLATION: (0, -1),
    }
    for kind, (de, di) in steps.items():
        hit = traj.kinds == kind
        assert (traj.e[hit] - prev_e[hit] == de).all()
        assert (traj.i[hit] - prev_i[hit] == di).all()


def test_no_events_without_sources():
    params = ModelParams(lam=0.05, mu=0.2, alpha=0.1, nu=0.0)
    traj = simulate(params, EIState(0, 0), 10_000.0, seed=1)
    assert len(traj) == 0
    states, obs = skeleton_sample(traj, 1.0)
    assert len(obs) == 10_000
    assert obs.total == 0
    assert (states == 0).all()


def test_rejects_bad_horizon(reference_params):
    for horizon in (0.0, -1.0, float("inf")):
        with pytest.raises(ConfigError):
            simulate(reference_params, EIState(), horizon, seed=0)


def test_skeleton_sample_counts_isolations(reference_params):
    traj = simulate(reference_params, EIState(0, 0), 3000.0, seed=11)
    states, obs = skeleton_sample(traj, 1.0)
    assert states.shape == (3001, 2)
    assert obs.total == traj.cumulative_isolations
    # net change of I over a window is bounded below by minus the isolations
    assert (states[:-1, 1] <= states[1:, 1] + obs.values).all()


def test_hand_built_windows():
    traj = Trajectory(
        initial=EIState(0, 1),
        horizon=3.0,
        times=np.array([0.5, 1.0, 2.2, 2.9]),
        kinds=np.array([EventKind.EXPOSURE, EventKind.ISOLATION, EventKind.INCUBATION, EventKind.ISOLATION], dtype=np.int8),
        e=np.array([1, 1, 0, 0]),
        i=np.array([1, 0, 1, 0]),
    )
    states, obs = skeleton_sample(traj, 1.0)
    # an event exactly on the grid belongs to the window it closes
    np.testing.assert_array_equal(obs.values, [1, 0, 1])
    np.testing.assert_array_equal(states, [[0, 1], [1, 0], [1, 0], [0, 0]])


def test_trajectory_frame_round_trip(reference_params):
    traj = simulate(reference_params, EIState(2, 1), 200.0, seed=5)
    back = Trajectory.from_frame(traj.to_frame())
    assert back.initial == traj.initial
    assert back.horizon == traj.horizon
    np.testing.assert_array_equal(back.kinds, traj.kinds)
    np.testing.assert_array_equal(back.i, traj.i)


def test_observation_validation():
    with pytest.raises(ConfigError):
        ObservationSeries(dt=1.0, values=[0, -1])
    with pytest.raises(ConfigError):
        ObservationSeries(dt=0.0, values=[0])


def test_mc_moments_independent_of_workers(reference_params):
    a = mc_moments(reference_params, EIState(), 100.0, n_mc=40, seed=2, workers=1)
    b = mc_moments(reference_params, EIState(), 100.0, n_mc=40, seed=2, workers=3)
    np.testing.assert_array_equal(a.e_end, b.e_end)
    np.testing.assert_array_equal(a.isolations, b.isolations)


def test_mc_moments_near_limits(reference_params):
    mc = mc_moments(reference_params, EIState(), 500.0, n_mc=2000, seed=4, workers=1)
    est = mc.estimates()
    assert est["E"][0] == pytest.approx(0.2, abs=0.05)
    assert est["I"][0] == pytest.approx(0.1, abs=0.03)
    assert est["N"][0] == pytest.approx(0.02, abs=0.003)
    with pytest.raises(ConfigError):
        mc_moments(reference_params, EIState(), 10.0, n_mc=1, seed=0)
