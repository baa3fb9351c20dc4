import numpy as np
import pytest
from scipy.linalg import expm

from mchmm.core.errors import ConfigError, NumericError, TruncationError
from mchmm.core.master_eq import (
    fit_decay_rate,
    relaxation_rate,
    solve_joint_kolmogorov,
    solve_kolmogorov,
    solve_moment_odes,
    truncated_generator,
)
from mchmm.core.model import EIState, ModelParams, TruncationConfig
from mchmm.core.moments import limit_moments
from mchmm.core.simulation import mc_moments


def test_zero_window_is_identity(reference_params, small_trunc):
    tensor = solve_kolmogorov(reference_params, small_trunc, 0.0)
    np.testing.assert_array_equal(tensor.matrix, np.eye(9))


def test_matches_matrix_exponential(reference_params):
    trunc = TruncationConfig(n_state=3, m_obs=2)
    tensor = solve_kolmogorov(reference_params, trunc, 1.0)
    exact = expm(truncated_generator(reference_params, (4, 4)))
    np.testing.assert_allclose(tensor.matrix, exact, atol=1e-7)


def test_origin_row_barely_leaks(reference_params):
    trunc = TruncationConfig(n_state=3, m_obs=2)
    tensor = solve_kolmogorov(reference_params, trunc, 1.0)
    assert tensor.leakage[0, 0] < 1e-4
    assert (tensor.probs >= 0).all()
    assert (tensor.probs.sum(axis=(2, 3)) <= 1.0 + 1e-9).all()


def test_zero_rates_give_structural_zeros():
    params = ModelParams(lam=0.05, mu=0.2, alpha=0.1, nu=0.0)
    tensor = solve_kolmogorov(params, TruncationConfig(n_state=3), 1.0)
    # from (0,0) nothing can happen
    assert tensor.probs[0, 0, 0, 0] == pytest.approx(1.0)
    assert tensor.probs[0, 0].sum() - tensor.probs[0, 0, 0, 0] == 0.0


def test_leak_limit_raises():
    params = ModelParams(lam=0.5, mu=0.6, alpha=1.0, nu=2.0)
    with pytest.raises(TruncationError):
        solve_kolmogorov(params, TruncationConfig(n_state=1), 1.0, max_leak=0.01)


def test_negative_window_rejected(reference_params, small_trunc):
    with pytest.raises(ConfigError):
        solve_kolmogorov(reference_params, small_trunc, -1.0)


def test_joint_marginal_agrees(reference_params):
    trunc = TruncationConfig(n_state=3, m_obs=4)
    joint = solve_joint_kolmogorov(reference_params, trunc, 1.0)
    marginal = solve_kolmogorov(reference_params, trunc, 1.0)
    # the joint tensor only loses the extra mass of y > M
    diff = marginal.probs - joint.marginal().probs
    assert (diff >= -1e-9).all()
    assert diff[0, 0].sum() < 1e-6


def test_joint_support_zeros(reference_params):
    trunc = TruncationConfig(n_state=3, m_obs=2)
    joint = solve_joint_kolmogorov(reference_params, trunc, 1.0).probs
    # i infected cannot drop to i' without i - i' isolations
    assert joint[0, 3, :, 0, 0].sum() == 0.0
    assert joint[0, 3, :, 0, 2].sum() == 0.0
    assert joint[0, 3, :, 1, 2].sum() > 0.0


def test_moment_odes_converge_to_limits(reference_params):
    curve = solve_moment_odes(reference_params, EIState(0, 0), 400.0)
    limits = limit_moments(reference_params)
    end = curve.at_end()
    assert end["E"] == pytest.approx(limits.e_star, rel=1e-6)
    assert end["I"] == pytest.approx(limits.i_star, rel=1e-6)
    assert end["EI"] == pytest.approx(limits.r_star, rel=1e-5)
    # Y grows at the long-run isolation rate once the transient is gone
    y = curve["Y"]
    assert (y[-1] - y[100]) / 200.0 == pytest.approx(limits.n_star, rel=1e-4)


def test_decay_rate_matches_eigenvalue(reference_params):
    curve = solve_moment_odes(reference_params, EIState(3, 2), 150.0, n_points=601)
    limit = limit_moments(reference_params).i_star
    fitted = fit_decay_rate(curve, "I", limit, 40.0, 120.0)
    assert fitted == pytest.approx(relaxation_rate(reference_params), rel=0.02)


@pytest.mark.parametrize("s, t", [(1.0, 1.0), (0.5, 1.5)])
def test_transition_tensors_compose(reference_params, s, t):
    trunc = TruncationConfig(n_state=3, m_obs=2)
    left = solve_kolmogorov(reference_params, trunc, s).matrix
    right = solve_kolmogorov(reference_params, trunc, t).matrix
    both = solve_kolmogorov(reference_params, trunc, s + t).matrix
    np.testing.assert_allclose(left @ right, both, atol=1e-6)


def test_second_moments_dominate_squared_means(reference_params):
    for initial in (EIState(0, 0), EIState(3, 2)):
        curve = solve_moment_odes(reference_params, initial, 200.0)
        assert (curve["E2"] >= curve["E"] ** 2 - 1e-9).all()
        assert (curve["I2"] >= curve["I"] ** 2 - 1e-9).all()
        assert (np.diff(curve["Y"]) >= -1e-9).all()


@pytest.mark.parametrize("horizon", [10.0, 100.0])
def test_monte_carlo_follows_moment_curve(reference_params, horizon):
    initial = EIState(2, 1)
    mc = mc_moments(reference_params, initial, horizon, n_mc=10_000, seed=8, workers=1).estimates()
    end = solve_moment_odes(reference_params, initial, horizon).at_end()
    expected = {"E": end["E"], "I": end["I"], "EI": end["EI"], "I2": end["I2"], "N": end["Y"] / horizon}
    for name, value in expected.items():
        mean, half = mc[name]
        assert abs(mean - value) <= 3 * half + 1e-3, name


def test_moment_integration_failure_is_numeric(reference_params, monkeypatch):
    class Failed:
        success = False
        message = "step size too small"

    monkeypatch.setattr("mchmm.core.master_eq.solve_ivp", lambda *args, **kwargs: Failed())
    with pytest.raises(NumericError):
        solve_moment_odes(reference_params, EIState(0, 0), 10.0)
