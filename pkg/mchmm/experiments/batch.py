"""Replicated experiments: simulate, fit and summarise many independent datasets."""

import logging
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import pandas as pd

from mchmm.core.errors import MchmmError
from mchmm.core.model import EIState, RateParams
from mchmm.core.parallel import derived_seed, run_tasks, worker_count
from mchmm.core.simulation import simulate, skeleton_sample
from mchmm.experiments.selection import compare
from mchmm.hmm.baum_welch import FitConfig, estimate_parameters

logger = logging.getLogger(__name__)

PARAM_COLUMNS = ["lambda", "mu", "alpha", "nu"]


@dataclass
class BatchResult:
    """One row per (replication, model) and the per-model summary."""
    rows: pd.DataFrame

    def summary(self) -> pd.DataFrame:
        """Mean and standard deviation of each estimate across replications."""
        ok = self.rows[self.rows["error"].isna()]
        cols = [c for c in PARAM_COLUMNS + ["log_likelihood", "bic"] if c in ok.columns]
        grouped = ok.groupby("model")[cols].agg(["mean", "std"])
        grouped.columns = [f"{name}_{stat}" for name, stat in grouped.columns]
        return grouped.reset_index()

    def win_counts(self) -> dict[str, int]:
        if "winner" not in self.rows.columns:
            return {}
        winners = self.rows.drop_duplicates("replication")["winner"].dropna()
        return {str(k): int(v) for k, v in winners.value_counts().items()}


def _replicate(task: tuple) -> list[dict]:
    mode, truth, initial, horizon, cfg, replication, seed, chain_steps = task
    traj = simulate(truth, initial, horizon, derived_seed(seed, replication, 0))
    _, obs = skeleton_sample(traj, cfg.dt)
    rep_cfg = FitConfig(**{
        **cfg.with_m_obs(obs).model_dump(),
        "seed": derived_seed(seed, replication, 1),
    })
    chain_seed = derived_seed(seed, replication, 2)
    if mode == "select":
        report = compare(obs, rep_cfg, chain_steps=chain_steps, seed=chain_seed, workers=1)
        return [
            {
                "replication": replication,
                "model": f.model,
                "m_obs": rep_cfg.trunc.m_obs,
                **{name: (f.params or {}).get(name, np.nan) for name in PARAM_COLUMNS},
                "log_likelihood": f.log_likelihood,
                "bic": f.bic,
                "winner": report.winner,
                "error": f.error,
            }
            for f in report.fits
        ]
    row = {
        "replication": replication,
        "model": rep_cfg.compartment_model.id,
        "m_obs": rep_cfg.trunc.m_obs,
        "error": None,
    }
    try:
        result = estimate_parameters(obs, rep_cfg, chain_steps=chain_steps, seed=chain_seed, workers=1)
    except MchmmError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return [row]
    row.update({name: result.params.as_dict().get(name, np.nan) for name in PARAM_COLUMNS})
    row["log_likelihood"] = result.log_likelihood
    return [row]


def run_replications(
    truth: RateParams,
    initial: EIState,
    horizon: float,
    cfg: FitConfig,
    replications: int,
    seed: int,
    mode: Literal["estimate", "select"] = "estimate",
    chain_steps: Optional[int] = None,
    workers: Optional[int] = None,
) -> BatchResult:
    """
    Independent datasets from `truth`, each fitted on its own.

    Replications run in parallel; each one fits its starts serially so that
    results do not depend on the worker count.
    """
    n_workers = worker_count(workers)
    logger.info(f"Running {replications} {mode} replications on {n_workers} workers")
    tasks = [
        (mode, truth, initial, horizon, cfg, r, seed, chain_steps)
        for r in range(replications)
    ]
    parts = run_tasks(_replicate, tasks, n_workers)
    rows = pd.DataFrame([row for part in parts for row in part])
    if "error" not in rows.columns:
        rows["error"] = None
    return BatchResult(rows=rows)
