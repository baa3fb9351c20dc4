import itertools

import numpy as np
import pytest

from mchmm.core.errors import ConfigError, MomentInversionError
from mchmm.core.model import ModelParams
from mchmm.core.moments import LimitMoments, invert_moments, limit_moments, plugin_estimate


def test_reference_limits(reference_params):
    m = limit_moments(reference_params)
    assert m.e_star == pytest.approx(0.2, rel=1e-12)
    assert m.i_star == pytest.approx(0.1, rel=1e-12)
    assert m.r_star == pytest.approx(0.042222222222222, rel=1e-12)
    assert m.n_star == pytest.approx(0.02, rel=1e-12)


def test_short_incubation_limits():
    m = limit_moments(ModelParams(lam=0.05, mu=0.5, alpha=2.0, nu=0.01))
    assert m.e_star == pytest.approx(1 / 180, rel=1e-12)
    assert m.i_star == pytest.approx(1 / 45, rel=1e-12)
    assert m.r_star == pytest.approx(5 / 8100, rel=1e-12)
    assert m.n_star == pytest.approx(1 / 90, rel=1e-12)
    back = invert_moments(m)
    assert back.alpha == pytest.approx(2.0, rel=1e-12)


def test_limits_vanish_without_sources():
    m = limit_moments(ModelParams(lam=0.05, mu=0.2, alpha=0.1, nu=0.0))
    assert m.as_dict() == {"e_star": 0.0, "i_star": 0.0, "r_star": 0.0, "n_star": 0.0}


def test_supercritical_rejected():
    with pytest.raises(ConfigError):
        limit_moments(ModelParams(lam=0.2, mu=0.2, alpha=0.1, nu=0.01))


def test_inversion_round_trip_on_grid():
    lams = np.linspace(0.01, 0.15, 8)
    mus = np.linspace(0.2, 0.6, 5)
    alphas = np.geomspace(0.05, 2.0, 5)
    nus = np.geomspace(0.005, 0.05, 4)
    for lam, mu, alpha, nu in itertools.product(lams, mus, alphas, nus):
        truth = ModelParams(lam=lam, mu=mu, alpha=alpha, nu=nu)
        back = invert_moments(limit_moments(truth))
        assert back.lam == pytest.approx(lam, rel=1e-12)
        assert back.mu == pytest.approx(mu, rel=1e-12)
        assert back.alpha == pytest.approx(alpha, rel=1e-12)
        assert back.nu == pytest.approx(nu, rel=1e-12)


def test_inversion_rejects_inconsistent_moments():
    with pytest.raises(MomentInversionError) as info:
        invert_moments(LimitMoments(e_star=0.2, i_star=0.0, r_star=0.04, n_star=0.02))
    assert "i_star" in str(info.value)
    # R* well below E* I* gives a negative contact rate
    with pytest.raises(MomentInversionError):
        invert_moments(LimitMoments(e_star=0.2, i_star=0.1, r_star=0.01, n_star=0.02))
    with pytest.raises(MomentInversionError):
        invert_moments(LimitMoments(e_star=float("nan"), i_star=0.1, r_star=0.04, n_star=0.02))


def test_plugin_intervals(reference_params):
    point = limit_moments(reference_params)
    samples = np.random.default_rng(0).normal(point.n_star, 0.001, size=500)
    estimate = plugin_estimate(point, samples)
    assert estimate.params["mu"] == pytest.approx(0.2)
    lo, hi = estimate.ci["mu"]
    assert lo < 0.2 < hi
    assert estimate.rejected_fraction == 0.0
    doc = estimate.to_document()
    assert doc["alpha"] == pytest.approx(0.1)
    assert set(doc["ci"]) == {"lambda", "mu", "alpha", "nu"}
