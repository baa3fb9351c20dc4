"""BIC comparison of the one-compartment and exposed-infected models."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

from pydantic import BaseModel

from mchmm.core.errors import ConfigError, MchmmError
from mchmm.core.parallel import split_workers, worker_count
from mchmm.core.simulation import ObservationSeries
from mchmm.hmm.baum_welch import FitConfig, estimate_parameters
from mchmm.models.registry import ModelRegistry

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATES = ("lbdi", "ei")
TIE_TOLERANCE = 1e-9


def bic(log_lik: float, k: int, t_obs: int) -> float:
    """k ln T - 2 log L; lower is better."""
    if t_obs < 1:
        raise ConfigError(f"BIC needs at least one observation, got {t_obs}")
    return k * math.log(t_obs) - 2.0 * log_lik


class ModelFit(BaseModel):
    """One candidate's outcome in a comparison."""
    model: str
    k: int
    params: Optional[dict[str, float]] = None
    log_likelihood: Optional[float] = None
    bic: Optional[float] = None
    error: Optional[str] = None


class SelectionReport(BaseModel):
    t_obs: int
    fits: list[ModelFit]
    winner: Optional[str] = None
    tie: bool = False

    def fit_for(self, model_id: str) -> Optional[ModelFit]:
        key = ModelRegistry.require(model_id).id
        return next((f for f in self.fits if f.model == key), None)


def _fit_candidate(
    obs: ObservationSeries,
    cfg: FitConfig,
    chain_steps: Optional[int],
    seed: Optional[int],
    workers: Optional[int],
) -> ModelFit:
    model = cfg.compartment_model
    try:
        result = estimate_parameters(obs, cfg, chain_steps=chain_steps, seed=seed, workers=workers)
    except MchmmError as exc:
        logger.warning(f"Model {model.id} failed: {exc}")
        return ModelFit(model=model.id, k=model.n_params, error=f"{type(exc).__name__}: {exc}")
    return ModelFit(
        model=model.id,
        k=model.n_params,
        params=result.params.as_dict(),
        log_likelihood=result.log_likelihood,
        bic=bic(result.log_likelihood, model.n_params, len(obs)),
    )


def decide(fits: list[ModelFit], t_obs: int) -> SelectionReport:
    """Winner is the strictly smallest BIC; no winner on failure or tie."""
    if any(f.error is not None for f in fits):
        return SelectionReport(t_obs=t_obs, fits=fits)
    ranked = sorted(fits, key=lambda f: f.bic)
    if len(ranked) > 1 and abs(ranked[1].bic - ranked[0].bic) <= TIE_TOLERANCE * max(1.0, abs(ranked[0].bic)):
        return SelectionReport(t_obs=t_obs, fits=fits, tie=True)
    return SelectionReport(t_obs=t_obs, fits=fits, winner=ranked[0].model)


def compare(
    obs: ObservationSeries,
    cfg: FitConfig,
    chain_steps: Optional[int] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    candidates: tuple[str, ...] = DEFAULT_CANDIDATES,
) -> SelectionReport:
    """Fit every candidate model to the same observations and rank them by BIC."""
    configs = [cfg.for_model(model_id) for model_id in candidates]
    n_workers = worker_count(workers)
    if n_workers < len(configs):
        fits = [_fit_candidate(obs, c, chain_steps, seed, n_workers) for c in configs]
    else:
        shares = split_workers(n_workers, len(configs))
        with ThreadPoolExecutor(max_workers=len(configs)) as pool:
            futures = [
                pool.submit(_fit_candidate, obs, c, chain_steps, seed, share)
                for c, share in zip(configs, shares)
            ]
            fits = [f.result() for f in futures]
    report = decide(fits, len(obs))
    logger.info(f"Selection winner: {report.winner} (tie={report.tie})")
    return report
