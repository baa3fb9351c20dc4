"""
Linear birth-death process with immigration (model 1).

The one-compartment baseline: infected individuals appear at rate
lambda*i + nu and are isolated at rate mu*i. The exposed coordinate of the
shared machinery is frozen at zero, so the truncation box is {0} x {0..N}.
"""

import math
from dataclasses import asdict, dataclass
from typing import ClassVar, Optional

import numpy as np
from pydantic import Field

from mchmm.config import INIT_RANGES
from mchmm.core.errors import ConfigError, MomentInversionError
from mchmm.core.model import EIState, EventKind, RateParams
from mchmm.core.simulation import ObservationSeries, Trajectory, simulate
from mchmm.hmm import baum_welch
from mchmm.models.base import ChainMoments, CompartmentModel, ModelParameter
from mchmm.models.registry import ModelRegistry


class LbdiParams(RateParams):
    """Birth (contamination), death (isolation) and immigration rates."""
    lam: float = Field(alias="lambda", ge=0, allow_inf_nan=False)
    mu: float = Field(ge=0, allow_inf_nan=False)
    nu: float = Field(ge=0, allow_inf_nan=False)

    EVENTS: ClassVar[tuple[tuple[EventKind, int, int], ...]] = (
        (EventKind.BIRTH, 0, 1),
        (EventKind.ISOLATION, 0, -1),
    )
    MOMENT_NAMES: ClassVar[tuple[str, ...]] = ("I", "Y", "I2")

    def rate_coefficients(self) -> np.ndarray:
        return np.array([
            [self.nu, 0.0, self.lam],
            [0.0, 0.0, self.mu],
        ])

    @classmethod
    def box_shape(cls, n_state: int) -> tuple[int, int]:
        return (1, n_state + 1)

    @property
    def stable(self) -> bool:
        return self.lam < self.mu

    def moment_system(self) -> tuple[np.ndarray, np.ndarray]:
        lam, mu, nu = self.lam, self.mu, self.nu
        # columns: I, Y, I2
        a = np.array([
            [lam - mu, 0, 0],
            [mu, 0, 0],
            [lam + mu + 2 * nu, 0, 2 * (lam - mu)],
        ], dtype=float)
        b = np.array([nu, 0, nu], dtype=float)
        return a, b

    def moment_initial(self, initial: EIState) -> np.ndarray:
        i = initial.i
        return np.array([i, 0, i * i], dtype=float)


@dataclass(frozen=True)
class LbdiMoments:
    """Stationary mean I*, second moment S* = lim E[I^2] and isolation rate N*."""
    i_star: float
    s_star: float
    n_star: float

    @property
    def variance(self) -> float:
        return self.s_star - self.i_star ** 2

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def lbdi_limit_moments(params: LbdiParams) -> LbdiMoments:
    lam, mu, nu = params.lam, params.mu, params.nu
    if lam >= mu:
        raise ConfigError(f"No stationary moments for lambda={lam} >= mu={mu}")
    i_star = nu / (mu - lam)
    variance = mu * nu / (mu - lam) ** 2
    return LbdiMoments(i_star=i_star, s_star=variance + i_star ** 2, n_star=mu * i_star)


def lbdi_invert(moments: LbdiMoments) -> LbdiParams:
    """mu = N*/I*, lambda = mu - N*/Var*, nu = I*(mu - lambda)."""
    m = moments
    if not all(math.isfinite(v) for v in (m.i_star, m.s_star, m.n_star)):
        raise MomentInversionError("Moments must be finite", m.as_dict())
    if m.i_star <= 0 or m.n_star <= 0:
        raise MomentInversionError("Inversion needs I* > 0 and N* > 0", m.as_dict())
    if m.variance <= 0:
        raise MomentInversionError("Inversion needs a positive stationary variance", m.as_dict())
    mu = m.n_star / m.i_star
    lam = mu - m.n_star / m.variance
    if lam < 0 or lam >= mu:
        raise MomentInversionError(
            f"Moments give lambda={lam:.6g}, outside [0, mu={mu:.6g})", m.as_dict()
        )
    return LbdiParams(lam=lam, mu=mu, nu=m.i_star * (mu - lam))


@ModelRegistry.register
class LbdiModel(CompartmentModel):
    """Birth-death-immigration baseline without incubation."""

    id = "lbdi"
    aliases = ("1",)
    name = "Linear birth-death with immigration"
    description = "Infections at rate lambda*i + nu, isolation at rate mu*i; no exposed stage."
    params_type = LbdiParams

    @property
    def parameters(self) -> list[ModelParameter]:
        return [
            ModelParameter(
                name="lambda",
                label="Contamination rate",
                init_range=INIT_RANGES["lambda"],
                help_text="New infections caused per infected individual per unit time",
            ),
            ModelParameter(
                name="mu",
                label="Isolation rate",
                init_range=INIT_RANGES["mu"],
                help_text="Inverse of the mean infectious period",
            ),
            ModelParameter(
                name="nu",
                label="Immigration rate",
                init_range=INIT_RANGES["nu"],
                help_text="Infections imported from outside the population",
            ),
        ]

    def limit_moments(self, params: LbdiParams) -> LbdiMoments:
        return lbdi_limit_moments(params)

    def invert(self, moments: LbdiMoments) -> LbdiParams:
        return lbdi_invert(moments)

    def moments_from_chain(self, summary: dict[str, tuple[float, float]], dt: float) -> ChainMoments:
        moments = LbdiMoments(
            i_star=summary["I"][0],
            s_star=summary["I2"][0],
            n_star=summary["Y"][0] / dt,
        )
        half = {
            "i_star": summary["I"][1],
            "s_star": summary["I2"][1],
            "n_star": summary["Y"][1] / dt,
        }
        return ChainMoments(values=moments, half_widths=half)

    def initial_state(self, e0: int, i0: int) -> EIState:
        if e0:
            raise ConfigError("The LBDI model has no exposed compartment; e0 must be 0")
        return EIState(0, i0)


def lbdi_simulate(params: LbdiParams, i0: int, horizon: float, seed: int) -> Trajectory:
    """Exact birth-death-immigration path; every event keeps e = 0."""
    return simulate(params, EIState(0, i0), horizon, seed)


def lbdi_estimate(
    obs: ObservationSeries,
    cfg: "baum_welch.FitConfig",
    chain_steps: Optional[int] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> "baum_welch.EstimateResult":
    """The shared estimation pipeline with the reduced hidden chain (I_{n-1}, I_n)."""
    if ModelRegistry.require(cfg.model).id != LbdiModel.id:
        cfg = cfg.for_model(LbdiModel.id)
    return baum_welch.estimate_parameters(obs, cfg, chain_steps=chain_steps, seed=seed, workers=workers)
