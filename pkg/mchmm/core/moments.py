"""Closed-form limit moments, their inversion, and plug-in estimation."""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from mchmm.core.errors import ConfigError, MomentInversionError
from mchmm.core.model import ModelParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LimitMoments:
    """Stationary moments: E*, I*, R* = lim E[E I], N* = lim E[Y(0,t]]/t."""
    e_star: float
    i_star: float
    r_star: float
    n_star: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


class ParameterEstimate(BaseModel):
    """Point estimates with percentile intervals, as exported to JSON."""
    params: dict[str, float]
    ci: dict[str, tuple[float, float]] = Field(default_factory=dict)
    rejected_fraction: float = 0.0

    def to_document(self) -> dict:
        return {**self.params, "ci": self.ci, "rejected_fraction": self.rejected_fraction}


def limit_moments(params: ModelParams) -> LimitMoments:
    lam, mu, alpha, nu = params.lam, params.mu, params.alpha, params.nu
    if lam >= mu:
        raise ConfigError(f"No stationary moments for lambda={lam} >= mu={mu}")
    if alpha <= 0 or mu <= 0:
        raise ConfigError("Limit moments need alpha > 0 and mu > 0")
    gap = mu - lam
    return LimitMoments(
        e_star=mu * nu / (alpha * gap),
        i_star=nu / gap,
        r_star=mu * nu * ((mu + alpha) * nu + alpha * lam) / (alpha * gap ** 2 * (mu + alpha)),
        n_star=mu * nu / gap,
    )


def _invert_arrays(e_star, i_star, r_star, n_star):
    """Vectorised inversion; returns (lam, mu, alpha, nu) arrays."""
    k = r_star / (e_star * i_star) - 1.0
    s = e_star + i_star
    lam = n_star * k * s / (i_star * (1.0 + k * s))
    mu = n_star / i_star
    alpha = n_star / e_star
    nu = i_star * (mu - lam)
    return lam, mu, alpha, nu


def invert_moments(moments: LimitMoments) -> ModelParams:
    """Rates reproducing the given limit moments; rejects inconsistent inputs."""
    m = moments
    values = (m.e_star, m.i_star, m.r_star, m.n_star)
    if not all(math.isfinite(v) for v in values):
        raise MomentInversionError("Moments must be finite", m.as_dict())
    if m.e_star <= 0 or m.i_star <= 0 or m.n_star <= 0:
        raise MomentInversionError("Inversion needs E* > 0, I* > 0 and N* > 0", m.as_dict())
    k = m.r_star / (m.e_star * m.i_star) - 1.0
    if 1.0 + k * (m.e_star + m.i_star) == 0:
        raise MomentInversionError("Degenerate correlation term in the inversion", m.as_dict())
    lam, mu, alpha, nu = _invert_arrays(m.e_star, m.i_star, m.r_star, m.n_star)
    if lam < 0 or lam >= mu:
        raise MomentInversionError(
            f"Moments give lambda={lam:.6g}, outside [0, mu={mu:.6g})", m.as_dict()
        )
    return ModelParams(lam=lam, mu=mu, alpha=alpha, nu=nu)


def plugin_estimate(
    moments: LimitMoments,
    n_star_samples: Optional[np.ndarray] = None,
    level: float = 0.95,
) -> ParameterEstimate:
    """
    Point estimates from the point moments, with intervals from N* alone.

    Each N* sample is pushed through the inversion with (E*, I*, R*) held
    at their point values; the interval is the central `level` quantile range.
    """
    point = invert_moments(moments)
    names = ("lambda", "mu", "alpha", "nu")
    estimate = ParameterEstimate(params=point.as_dict())
    if n_star_samples is None or len(n_star_samples) == 0:
        return estimate
    samples = np.asarray(n_star_samples, dtype=float)
    lam, mu, alpha, nu = _invert_arrays(moments.e_star, moments.i_star, moments.r_star, samples)
    ok = np.isfinite(lam) & (lam >= 0) & (lam < mu) & (samples > 0)
    rejected = 1.0 - float(ok.mean())
    if rejected > 0:
        logger.warning(f"{rejected:.1%} of N* samples were rejected by the inversion")
    tail = (1.0 - level) / 2 * 100
    ci = {}
    if ok.any():
        for name, arr in zip(names, (lam, mu, alpha, nu)):
            lo, hi = np.percentile(arr[ok], [tail, 100 - tail])
            ci[name] = (float(lo), float(hi))
    return ParameterEstimate(params=point.as_dict(), ci=ci, rejected_fraction=rejected)
