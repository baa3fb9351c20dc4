"""
Adapted Baum-Welch for the structured HMM.

Every iteration re-estimates the skeleton p, the emissions psi and the
initial law pi from posterior expected counts, then rebuilds (Q, psi, rho)
through build_hmm so the i' = j structure holds at every step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mchmm.config import (
    BURN_IN,
    CHAIN_STEPS,
    DEFAULT_DT,
    DEFAULT_SEED,
    FIT_MAX_ITER,
    FIT_STARTS,
    FIT_TOL,
    INIT_PATHS,
    INIT_STEPS,
    MIN_M_OBS,
    MIN_ROW_VISITS,
)
from mchmm.core.errors import ConfigError, ConvergenceError, NumericError
from mchmm.core.model import RateParams, TruncationConfig
from mchmm.core.parallel import derived_seed, replica_rng, run_tasks, worker_count
from mchmm.core.simulation import ObservationSeries
from mchmm.hmm.model import (
    HmmModel,
    backward_pass,
    build_hmm,
    check_observations,
    forward_pass,
    log_likelihood,
)
from mchmm.hmm.skeleton import (
    EmissionTable,
    SkeletonMatrix,
    estimate_skeleton,
    oracle_skeleton,
    simulate_skeleton,
    stationary_distribution,
)
from mchmm.models.base import ChainMoments, CompartmentModel
from mchmm.models.registry import ModelRegistry

logger = logging.getLogger(__name__)

_MIN_OCCUPATION = 1e-300


class FitConfig(BaseModel):
    """Settings of a multi-start Baum-Welch fit."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    model: str = "ei"
    max_iter: int = Field(FIT_MAX_ITER, ge=0)
    tol: float = Field(FIT_TOL, gt=0)
    starts: int = Field(FIT_STARTS, ge=1)
    init_ranges: dict[str, tuple[float, float]] = Field(default_factory=dict)
    dt: float = Field(DEFAULT_DT, gt=0, allow_inf_nan=False)
    trunc: TruncationConfig = Field(default_factory=TruncationConfig)
    seed: int = DEFAULT_SEED
    init_method: Literal["monte_carlo", "oracle"] = "monte_carlo"
    init_paths: int = Field(INIT_PATHS, ge=1)
    init_steps: int = Field(INIT_STEPS, ge=1)
    min_row_visits: int = Field(MIN_ROW_VISITS, ge=1)
    recovery_weights: Literal["occupation", "initial"] = "occupation"
    burn_in: int = Field(BURN_IN, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _default_ranges(cls, data: Any) -> Any:
        if isinstance(data, dict) and not data.get("init_ranges"):
            model = ModelRegistry.get(data.get("model", "ei"))
            if model is not None:
                data = {**data, "init_ranges": model.default_init_ranges()}
        return data

    @model_validator(mode="after")
    def _check_ranges(self) -> "FitConfig":
        model = ModelRegistry.get(self.model)
        if model is None:
            raise ValueError(f"unknown model '{self.model}'")
        missing = set(model.param_names) - set(self.init_ranges)
        if missing:
            raise ValueError(f"init_ranges lacks {sorted(missing)}")
        for name, (lo, hi) in self.init_ranges.items():
            if not 0 <= lo < hi:
                raise ValueError(f"init range for {name} must satisfy 0 <= low < high, got ({lo}, {hi})")
        if self.init_ranges["lambda"][1] >= self.init_ranges["mu"][0]:
            raise ValueError("the lambda range must lie below the mu range")
        return self

    @property
    def compartment_model(self) -> CompartmentModel:
        return ModelRegistry.require(self.model)

    def for_model(self, model_id: str) -> "FitConfig":
        """Same settings for another model, keeping the ranges they share."""
        target = ModelRegistry.require(model_id)
        defaults = target.default_init_ranges()
        ranges = {name: self.init_ranges.get(name, defaults[name]) for name in target.param_names}
        return FitConfig(**{**self.model_dump(), "model": target.id, "init_ranges": ranges})

    def with_m_obs(self, obs: ObservationSeries) -> "FitConfig":
        """Raise the emission bound to the largest observed count; a larger configured M is kept."""
        m_obs = max(obs.max, self.trunc.m_obs, MIN_M_OBS)
        trunc = TruncationConfig(n_state=self.trunc.n_state, m_obs=m_obs)
        return FitConfig(**{**self.model_dump(), "trunc": trunc.model_dump()})


@dataclass
class EmStatistics:
    """Posterior expected quantities of one E-step."""
    gamma: np.ndarray
    xi_sum: np.ndarray
    log_likelihood: float


def expected_statistics(h: HmmModel, obs: ObservationSeries) -> EmStatistics:
    """gamma_t for every t and the time-summed xi in the compressed layout of q."""
    values = check_observations(h, obs)
    emissions = h.emissions_for(values)
    alpha, scale = forward_pass(h, emissions)
    beta = backward_pass(h, emissions, scale)
    gamma = alpha * beta
    ke, ki = h.shape
    size = ke * ki
    n_steps = len(values)
    if n_steps > 1:
        weight = emissions[1:] * beta[1:] / scale[1:, None, None, None]
        left = alpha[:-1].transpose(3, 1, 2, 0).reshape(ki, size, n_steps - 1)
        right = weight.transpose(2, 0, 1, 3).reshape(ki, n_steps - 1, size)
        pair = (left @ right).reshape(ki, ke, ki, ke, ki).transpose(1, 2, 0, 3, 4)
        xi_sum = h.q * pair
    else:
        xi_sum = np.zeros_like(h.q)
    return EmStatistics(gamma=gamma, xi_sum=xi_sum, log_likelihood=math.fsum(np.log(scale)))


def _next_state_given_triple(h: HmmModel) -> np.ndarray:
    """p[(e,i),(e',j)] / p[(e,i),(.,j)] as [e, i, j, e']."""
    p = h.skeleton.probs.transpose(0, 1, 3, 2)
    out = np.zeros_like(p)
    ok = h.marg > 0
    out[ok] = p[ok] / h.marg[ok][:, None]
    return out


def _recover_skeleton(h: HmmModel, stats: EmStatistics, weights: str) -> np.ndarray:
    old = h.skeleton.probs
    if weights == "occupation":
        # expected (e,i) -> (e',j) transitions, the last step completed by p itself
        counts = stats.xi_sum.sum(axis=-1) + stats.gamma[-1][..., None] * _next_state_given_triple(h)
        counts = counts.transpose(0, 1, 3, 2)
        occupation = stats.gamma.sum(axis=(0, 3))
    else:
        per_triple = stats.gamma.sum(axis=0)
        q_new = np.zeros_like(stats.xi_sum)
        seen = per_triple > _MIN_OCCUPATION
        q_new[seen] = stats.xi_sum[seen] / per_triple[seen][:, None, None]
        rho = stats.gamma[0]
        counts = (q_new.sum(axis=-1) * rho[..., None]).transpose(0, 1, 3, 2)
        occupation = counts.sum(axis=(2, 3))
    new = old.copy()
    visited = occupation > _MIN_OCCUPATION
    new[visited] = counts[visited] / occupation[visited][:, None, None]
    if (~visited).any():
        logger.debug(f"{int((~visited).sum())} skeleton rows have no posterior mass; keeping them")
    return new


def _recover_emissions(h: HmmModel, stats: EmStatistics, values: np.ndarray) -> np.ndarray:
    ky = h.m_obs + 1
    numer = np.zeros(h.psi.probs.shape)
    for y in range(ky):
        hit = values == y
        if hit.any():
            numer[..., y] = stats.gamma[hit].sum(axis=0)
    denom = stats.gamma.sum(axis=0)
    new = h.psi.probs.copy()
    seen = denom > _MIN_OCCUPATION
    new[seen] = numer[seen] / denom[seen][:, None]
    return new


def reestimate(
    h: HmmModel,
    stats: EmStatistics,
    values: np.ndarray,
    recovery_weights: str = "occupation",
) -> HmmModel:
    p_new = _recover_skeleton(h, stats, recovery_weights)
    psi_new = _recover_emissions(h, stats, values)
    pi_new = stats.gamma[0].sum(axis=-1)
    pi_new = pi_new / pi_new.sum()
    return build_hmm(
        SkeletonMatrix(probs=p_new, dt=h.skeleton.dt, corrected=True),
        EmissionTable(probs=psi_new, corrected=True),
        pi_new,
    )


def bw_step(
    h: HmmModel,
    obs: ObservationSeries,
    recovery_weights: str = "occupation",
) -> tuple[HmmModel, float]:
    """One EM update; returns the new model and the log-likelihood of `h`."""
    stats = expected_statistics(h, obs)
    return reestimate(h, stats, np.asarray(obs.values), recovery_weights), stats.log_likelihood


@dataclass
class StartOutcome:
    """What one start of the multi-start fit produced."""
    index: int
    initial_params: dict[str, float]
    trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    model: Optional[HmmModel] = None
    error: Optional[str] = None

    @property
    def final_log_likelihood(self) -> float:
        return self.trace[-1] if self.trace else -math.inf


class StartReport(BaseModel):
    index: int
    initial_params: dict[str, float]
    log_likelihood: list[float]
    iterations: int
    converged: bool
    error: Optional[str] = None


class FitReport(BaseModel):
    """JSON form of a fit: all likelihood traces plus the chosen model."""
    model: str
    config: dict[str, Any]
    best_start: int
    log_likelihood: float
    starts: list[StartReport]
    skeleton: list[list[float]]
    pi: list[list[float]]


@dataclass
class FitResult:
    config: FitConfig
    starts: list[StartOutcome]
    best_index: int

    @property
    def best(self) -> HmmModel:
        return self.starts[self.best_index].model

    @property
    def skeleton(self) -> SkeletonMatrix:
        return self.best.skeleton

    @property
    def log_likelihood(self) -> float:
        return self.starts[self.best_index].final_log_likelihood

    @property
    def failures(self) -> list[StartOutcome]:
        return [s for s in self.starts if s.error is not None]

    def to_report(self) -> FitReport:
        return FitReport(
            model=self.config.model,
            config=self.config.model_dump(),
            best_start=self.best_index,
            log_likelihood=self.log_likelihood,
            starts=[
                StartReport(
                    index=s.index,
                    initial_params=s.initial_params,
                    log_likelihood=s.trace,
                    iterations=s.iterations,
                    converged=s.converged,
                    error=s.error,
                )
                for s in self.starts
            ],
            skeleton=self.skeleton.matrix.tolist(),
            pi=self.best.pi.tolist(),
        )


def initial_hmm(
    params: RateParams,
    cfg: FitConfig,
    seed: int,
    workers: Optional[int] = 1,
) -> HmmModel:
    """Starting model: skeleton and emissions at `params`, pi stationary for that skeleton."""
    if cfg.init_method == "oracle":
        skeleton, psi = oracle_skeleton(params, cfg.trunc, cfg.dt)
    else:
        skeleton, psi = estimate_skeleton(
            params,
            cfg.trunc,
            cfg.dt,
            n_mc=cfg.init_paths,
            seed=seed,
            steps=cfg.init_steps,
            min_row_visits=cfg.min_row_visits,
            workers=workers,
        )
    return build_hmm(skeleton, psi, stationary_distribution(skeleton))


def run_em(
    h: HmmModel,
    obs: ObservationSeries,
    cfg: FitConfig,
) -> tuple[HmmModel, list[float], bool]:
    """
    Iterate bw_step until the relative log-likelihood change drops below tol.

    Returns the last model whose likelihood is known, its trace and whether
    the tolerance was met.
    """
    trace: list[float] = []
    for iteration in range(cfg.max_iter):
        h_next, ll = bw_step(h, obs, cfg.recovery_weights)
        trace.append(ll)
        logger.debug(f"iteration {iteration}: log-likelihood {ll:.10g}")
        if len(trace) > 1 and abs(ll - trace[-2]) <= cfg.tol * abs(trace[-2]):
            return h, trace, True
        h = h_next
    trace.append(log_likelihood(h, obs))
    return h, trace, False


def _run_start(task: tuple) -> StartOutcome:
    obs, cfg, index, inner_workers = task
    model = cfg.compartment_model
    params = model.draw_params(cfg.init_ranges, replica_rng(cfg.seed, index))
    outcome = StartOutcome(index=index, initial_params=params.as_dict())
    try:
        h0 = initial_hmm(params, cfg, derived_seed(cfg.seed, index, 1), inner_workers)
        h, trace, converged = run_em(h0, obs, cfg)
    except NumericError as exc:
        logger.warning(f"Start {index} failed: {exc}")
        outcome.error = f"{type(exc).__name__}: {exc}"
        return outcome
    outcome.model = h
    outcome.trace = trace
    outcome.iterations = len(trace) - 1
    outcome.converged = converged
    return outcome


def fit(obs: ObservationSeries, cfg: FitConfig, workers: Optional[int] = None) -> FitResult:
    """Run every start, in parallel when allowed, and keep the most likely model."""
    if len(obs) == 0:
        raise ConfigError("Cannot fit an empty observation series")
    if abs(obs.dt - cfg.dt) > 1e-12 * max(1.0, cfg.dt):
        raise ConfigError(f"Observation window {obs.dt} differs from the fit window {cfg.dt}")
    n_workers = worker_count(workers)
    outer = n_workers if cfg.starts > 1 else 1
    inner = 1 if outer > 1 else n_workers
    logger.info(f"Fitting model {cfg.model} with {cfg.starts} starts (N={cfg.trunc.n_state}, M={cfg.trunc.m_obs})")
    starts = run_tasks(_run_start, [(obs, cfg, k, inner) for k in range(cfg.starts)], outer)
    finished = [s for s in starts if s.model is not None]
    if not finished:
        reasons = "; ".join(f"start {s.index}: {s.error}" for s in starts)
        raise ConvergenceError(f"All {cfg.starts} starts failed ({reasons})")
    best = max(finished, key=lambda s: s.final_log_likelihood)
    logger.info(f"Best start {best.index} with log-likelihood {best.final_log_likelihood:.6f}")
    return FitResult(config=cfg, starts=starts, best_index=best.index)


class EstimateReport(BaseModel):
    """JSON form of a parameter estimate."""
    model: str
    params: dict[str, float]
    moments: dict[str, float]
    moment_ci: dict[str, float]
    log_likelihood: float
    t_obs: int
    chain_steps: int
    start_log_likelihoods: list[Optional[float]]


@dataclass
class EstimateResult:
    model_id: str
    params: RateParams
    moments: ChainMoments
    fit: FitResult
    chain_steps: int
    t_obs: int

    @property
    def log_likelihood(self) -> float:
        return self.fit.log_likelihood

    def to_report(self) -> EstimateReport:
        return EstimateReport(
            model=self.model_id,
            params=self.params.as_dict(),
            moments=self.moments.values.as_dict(),
            moment_ci=self.moments.half_widths,
            log_likelihood=self.log_likelihood,
            t_obs=self.t_obs,
            chain_steps=self.chain_steps,
            start_log_likelihoods=[s.trace[-1] if s.trace else None for s in self.fit.starts],
        )


def chain_moments(
    result: FitResult,
    chain_steps: int,
    seed: int,
) -> ChainMoments:
    """Stationary moments of the fitted skeleton, read off a long simulated chain."""
    cfg = result.config
    best = result.best
    sample = simulate_skeleton(
        best.skeleton,
        best.psi,
        steps=chain_steps,
        burn_in=cfg.burn_in,
        seed=seed,
        initial=best.pi,
    )
    return cfg.compartment_model.moments_from_chain(sample.summary(), cfg.dt)


def estimate_parameters(
    obs: ObservationSeries,
    cfg: FitConfig,
    chain_steps: Optional[int] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> EstimateResult:
    """Fit, simulate the fitted chain, and invert its stationary moments."""
    model = cfg.compartment_model
    result = fit(obs, cfg, workers)
    steps = chain_steps or CHAIN_STEPS
    moments = chain_moments(result, steps, cfg.seed if seed is None else seed)
    params = model.invert(moments.values)
    logger.info(f"Estimated {model.id} parameters: {params.as_dict()}")
    return EstimateResult(
        model_id=model.id,
        params=params,
        moments=moments,
        fit=result,
        chain_steps=steps,
        t_obs=len(obs),
    )
