"""
Truncated skeleton chain: Monte Carlo estimation of the window transition
matrix and the emission table, truncation corrections, and chain sampling.
"""

import bisect
import logging
from dataclasses import dataclass, field, replace
from functools import singledispatch
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy import stats

from mchmm.config import BURN_IN, CI_BATCHES, MAX_CORRECTION_DEFICIT, MIN_ROW_VISITS
from mchmm.core.errors import ConfigError, TruncationError
from mchmm.core.master_eq import tensor_frame, solve_joint_kolmogorov, solve_kolmogorov
from mchmm.core.model import EIState, RateParams, TruncationConfig
from mchmm.core.parallel import chunk_ranges, replica_rng, run_tasks, worker_count
from mchmm.core.simulation import simulate_with_rng, skeleton_sample

logger = logging.getLogger(__name__)

_ROW_SLACK = 1e-6


@dataclass
class SkeletonMatrix:
    """p[(e,i),(e',i')] of the window chain as a (Ke, Ki, Ke, Ki) array."""
    probs: np.ndarray
    dt: float = 1.0
    corrected: bool = False
    visits: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    @property
    def n_state(self) -> int:
        return self.probs.shape[1] - 1

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self.probs.reshape(self.size, self.size)

    def row_deficits(self) -> np.ndarray:
        return 1.0 - self.probs.sum(axis=(2, 3))

    def to_frame(self) -> pd.DataFrame:
        return tensor_frame(self.probs, ["e", "i", "e'", "i'"])


@dataclass
class EmissionTable:
    """psi[(e,i,j), y] as a (Ke, Ki, Ki, M+1) array; the last bin holds P(Y >= M)."""
    probs: np.ndarray
    corrected: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    @property
    def n_state(self) -> int:
        return self.probs.shape[1] - 1

    @property
    def m_obs(self) -> int:
        return self.probs.shape[-1] - 1

    def to_frame(self) -> pd.DataFrame:
        return tensor_frame(self.probs, ["e", "i", "j", "y"])


def emission_support(shape: tuple[int, int], m_obs: int) -> np.ndarray:
    """True where psi_(e,i,j)(y) may be positive: i <= j + y, or the tail bin."""
    ki = shape[1]
    i = np.arange(ki)[:, None, None]
    j = np.arange(ki)[None, :, None]
    y = np.arange(m_obs + 1)[None, None, :]
    ok = (i <= j + y) | (y == m_obs)
    return np.broadcast_to(ok[None], (shape[0], ki, ki, m_obs + 1)).copy()


def interior_rows(shape: tuple[int, int]) -> np.ndarray:
    """Start states strictly inside the box along every non-frozen axis."""
    mask = np.ones(shape, dtype=bool)
    if shape[0] > 1:
        mask[-1, :] = False
    if shape[1] > 1:
        mask[:, -1] = False
    return mask


@singledispatch
def apply_truncation_correction(raw, max_deficit: float = MAX_CORRECTION_DEFICIT):
    """Put the mass each row lost past the box back into its last entry."""
    raise TypeError(f"Cannot correct {type(raw).__name__}")


@apply_truncation_correction.register
def _(raw: SkeletonMatrix, max_deficit: float = MAX_CORRECTION_DEFICIT) -> SkeletonMatrix:
    flat = raw.matrix.copy()
    totals = flat.sum(axis=1)
    if (totals > 1.0 + _ROW_SLACK).any():
        worst = int(np.argmax(totals))
        raise TruncationError(f"Row {np.unravel_index(worst, raw.shape)} sums to {totals[worst]:.12g} > 1")
    # integration round-off can push a row a hair above one
    over = totals > 1.0
    flat[over] /= totals[over][:, None]
    totals = np.minimum(totals, 1.0)
    deficits = (1.0 - totals).reshape(raw.shape)
    interior = interior_rows(raw.shape)
    too_big = interior & (deficits > max_deficit)
    if too_big.any():
        e, i = np.argwhere(too_big)[0]
        raise TruncationError(
            f"Row ({e},{i}) lost {deficits[e, i]:.3g} of its mass; increase the truncation bound"
        )
    boundary = ~interior & (deficits > max_deficit)
    if boundary.any():
        logger.info(f"{int(boundary.sum())} boundary rows lose more than {max_deficit} to truncation")
    others = flat[:, :-1].sum(axis=1)
    flat[:, -1] = np.maximum(1.0 - others, 0.0)
    return replace(raw, probs=flat.reshape(raw.probs.shape), corrected=True)


@apply_truncation_correction.register
def _(raw: EmissionTable, max_deficit: float = MAX_CORRECTION_DEFICIT) -> EmissionTable:
    probs = raw.probs.copy()
    below = probs[..., :-1].sum(axis=-1)
    if (below > 1.0 + _ROW_SLACK).any():
        raise TruncationError("An emission row puts more than all its mass below M")
    over = below > 1.0
    probs[over] /= below[over][:, None]
    below = np.minimum(below, 1.0)
    probs[..., -1] = np.maximum(1.0 - below, 0.0)
    return replace(raw, probs=probs, corrected=True)


def neighbour_rows(shape: tuple[int, int]) -> np.ndarray:
    """Uniform distribution over each state and its one-step neighbours in the box."""
    ke, ki = shape
    probs = np.zeros(shape + shape)
    for e in range(ke):
        for i in range(ki):
            for de, di in ((0, 0), (1, 0), (-1, 1), (0, -1), (0, 1), (-1, 0)):
                if 0 <= e + de < ke and 0 <= i + di < ki:
                    probs[e, i, e + de, i + di] = 1.0
            probs[e, i] /= probs[e, i].sum()
    return probs


def uniform_emissions(shape: tuple[int, int], m_obs: int) -> np.ndarray:
    support = emission_support(shape, m_obs).astype(float)
    return support / support.sum(axis=-1, keepdims=True)


def oracle_skeleton(
    params: RateParams,
    trunc: TruncationConfig,
    dt: float,
) -> tuple[SkeletonMatrix, EmissionTable]:
    """Corrected skeleton and emissions from the master equations, no sampling."""
    raw_p, raw_psi = _oracle_raw(params, trunc, dt)
    return (
        apply_truncation_correction(SkeletonMatrix(probs=raw_p, dt=dt)),
        apply_truncation_correction(EmissionTable(probs=raw_psi)),
    )


def _oracle_raw(params: RateParams, trunc: TruncationConfig, dt: float) -> tuple[np.ndarray, np.ndarray]:
    marginal = solve_kolmogorov(params, trunc, dt).probs
    joint = solve_joint_kolmogorov(params, trunc, dt).probs
    # condition on (e, i, j): sum the next exposed count out
    num = joint.sum(axis=2)
    den = marginal.sum(axis=2)[..., None]
    shape = marginal.shape[:2]
    psi = np.where(den > 0, num / np.where(den > 0, den, 1.0), uniform_emissions(shape, trunc.m_obs))
    psi[~emission_support(shape, trunc.m_obs)] = 0.0
    # tiny denominators amplify integration error
    psi /= np.maximum(psi.sum(axis=-1, keepdims=True), 1.0)
    return marginal, psi


def _count_chunk(task: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    params, initial, shape, m_obs, dt, steps, seed, start, stop = task
    ke, ki = shape
    size = ke * ki
    trans = np.zeros(size * (size + 1), dtype=np.int64)
    emit = np.zeros(ke * ki * ki * (m_obs + 1), dtype=np.int64)
    visits3 = np.zeros(ke * ki * ki, dtype=np.int64)
    for replica in range(start, stop):
        traj = simulate_with_rng(params, initial, steps * dt, replica_rng(seed, replica))
        states, obs = skeleton_sample(traj, dt)
        e0, i0 = states[:-1, 0], states[:-1, 1]
        e1, i1 = states[1:, 0], states[1:, 1]
        src_in = (e0 < ke) & (i0 < ki)
        dst_in = (e1 < ke) & (i1 < ki)
        src = e0 * ki + i0
        dst = np.where(dst_in, e1 * ki + i1, size)
        trans += np.bincount((src * (size + 1) + dst)[src_in], minlength=trans.size)
        tri_in = src_in & dst_in
        tri = ((e0 * ki + i0) * ki + i1)[tri_in]
        y = np.minimum(obs.values, m_obs)[tri_in]
        visits3 += np.bincount(tri, minlength=visits3.size)
        emit += np.bincount(tri * (m_obs + 1) + y, minlength=emit.size)
    return trans, emit, visits3


def estimate_skeleton(
    params: RateParams,
    trunc: TruncationConfig,
    dt: float,
    n_mc: int,
    seed: int,
    steps: int = 10_000,
    initial: Optional[EIState] = None,
    min_row_visits: int = MIN_ROW_VISITS,
    workers: Optional[int] = None,
) -> tuple[SkeletonMatrix, EmissionTable]:
    """
    Pooled one-step frequencies from n_mc simulated paths of `steps` windows.

    Rows visited fewer than min_row_visits times take the master-equation
    row at the same parameters. Both tables are truncation-corrected.
    """
    if n_mc < 1 or steps < 1:
        raise ConfigError("estimate_skeleton needs at least one path of at least one step")
    initial = initial or EIState()
    min_row_visits = max(1, min_row_visits)
    shape = params.box_shape(trunc.n_state)
    ke, ki = shape
    size = ke * ki
    m_obs = trunc.m_obs
    n_workers = worker_count(workers)
    tasks = [
        (params, initial, shape, m_obs, dt, steps, seed, a, b)
        for a, b in chunk_ranges(n_mc, n_workers * 4)
    ]
    parts = run_tasks(_count_chunk, tasks, n_workers)
    trans = sum(p[0] for p in parts).reshape(size, size + 1)
    emit = sum(p[1] for p in parts).reshape(ke, ki, ki, m_obs + 1)
    visits3 = sum(p[2] for p in parts).reshape(ke, ki, ki)

    visits = trans.sum(axis=1)
    probs = trans[:, :size] / np.maximum(visits, 1)[:, None]
    psi = emit / np.maximum(visits3, 1)[..., None]

    never = np.argwhere(visits.reshape(shape) == 0)
    if len(never):
        logger.warning(f"States never visited by the sampled paths: {[tuple(s) for s in never.tolist()]}")
    sparse_rows = visits < min_row_visits
    sparse_triples = visits3 < min_row_visits
    if sparse_rows.any() or sparse_triples.any():
        logger.info(
            f"{int(sparse_rows.sum())} rows and {int(sparse_triples.sum())} emission rows "
            f"fall back to the master-equation oracle"
        )
        oracle_p, oracle_psi = _oracle_raw(params, trunc, dt)
        probs[sparse_rows] = oracle_p.reshape(size, size)[sparse_rows]
        psi[sparse_triples] = oracle_psi[sparse_triples]

    skeleton = SkeletonMatrix(probs=probs.reshape(shape + shape), dt=dt, visits=visits.reshape(shape))
    emissions = EmissionTable(probs=psi)
    return apply_truncation_correction(skeleton), apply_truncation_correction(emissions)


def skeleton_from_counts(
    trans: np.ndarray,
    emit: np.ndarray,
    dt: float,
    min_row_visits: int = MIN_ROW_VISITS,
) -> tuple[SkeletonMatrix, EmissionTable]:
    """Frequencies from raw counts, uniform over neighbours where data is too thin."""
    min_row_visits = max(1, min_row_visits)
    shape = trans.shape[:2]
    size = shape[0] * shape[1]
    flat = trans.reshape(size, size).astype(float)
    visits = flat.sum(axis=1)
    probs = flat / np.maximum(visits, 1)[:, None]
    thin = visits < min_row_visits
    if thin.any():
        logger.warning(f"{int(thin.sum())} rows have too few transitions; using uniform neighbour rows")
        probs[thin] = neighbour_rows(shape).reshape(size, size)[thin]
    m_obs = emit.shape[-1] - 1
    emit_visits = emit.sum(axis=-1)
    psi = emit / np.maximum(emit_visits, 1)[..., None]
    thin3 = emit_visits < min_row_visits
    psi[thin3] = uniform_emissions(shape, m_obs)[thin3]
    skeleton = SkeletonMatrix(probs=probs.reshape(shape + shape), dt=dt, visits=visits.reshape(shape))
    return apply_truncation_correction(skeleton), apply_truncation_correction(EmissionTable(probs=psi))


def stationary_distribution(skeleton: SkeletonMatrix) -> np.ndarray:
    """Solution of pi P = pi, sum(pi) = 1, as a (Ke, Ki) array."""
    p = skeleton.matrix
    size = p.shape[0]
    a = np.vstack([p.T - np.eye(size), np.ones((1, size))])
    b = np.zeros(size + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.maximum(pi, 0.0)
    return (pi / pi.sum()).reshape(skeleton.shape)


def batch_mean_ci(values: np.ndarray, batches: int = CI_BATCHES, level: float = 0.95) -> tuple[float, float]:
    """Mean and CI half-width from non-overlapping batch means."""
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    usable = len(values) - len(values) % batches
    if batches < 2 or usable < batches:
        return mean, float("nan")
    means = values[:usable].reshape(batches, -1).mean(axis=1)
    quantile = stats.t.ppf(0.5 + level / 2, batches - 1)
    return mean, float(quantile * means.std(ddof=1) / np.sqrt(batches))


def _chain_statistics(states: np.ndarray, emissions: Optional[np.ndarray]) -> dict[str, np.ndarray]:
    e = states[:, 0].astype(float)
    i = states[:, 1].astype(float)
    out = {"E": e, "I": i, "EI": e * i, "E2": e * e, "I2": i * i}
    if emissions is not None:
        out["Y"] = emissions.astype(float)
    return out


@dataclass
class SkeletonSample:
    """States (and emissions) of the skeleton chain after burn-in."""
    states: np.ndarray
    emissions: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.states)

    def summary(self, batches: int = CI_BATCHES) -> dict[str, tuple[float, float]]:
        """Mean and batch-means CI half-width of E, I, EI, E2, I2 (and Y)."""
        return {
            name: batch_mean_ci(values, batches)
            for name, values in _chain_statistics(self.states, self.emissions).items()
        }


@dataclass
class EndpointSample:
    """Independent draws of the state after a fixed number of windows."""
    states: np.ndarray
    steps: int
    distribution: np.ndarray = field(repr=False, default=None)

    def summary(self, level: float = 0.95) -> dict[str, tuple[float, float]]:
        z = stats.norm.ppf(0.5 + level / 2)
        out = {}
        for name, values in _chain_statistics(self.states, None).items():
            half = z * values.std(ddof=1) / np.sqrt(len(values)) if len(values) > 1 else float("nan")
            out[name] = (float(values.mean()), float(half))
        return out


def _start_index(skeleton: SkeletonMatrix, initial: Union[EIState, np.ndarray, None], rng) -> int:
    shape = skeleton.shape
    if initial is None:
        return 0
    if isinstance(initial, EIState):
        if not initial.within(shape):
            raise ConfigError(f"Initial state {initial} lies outside the truncation box")
        return initial.e * shape[1] + initial.i
    dist = np.asarray(initial, dtype=float).ravel()
    return int(rng.choice(len(dist), p=dist / dist.sum()))


def simulate_skeleton(
    skeleton: SkeletonMatrix,
    psi: Optional[EmissionTable] = None,
    steps: int = 100_000,
    burn_in: int = BURN_IN,
    seed: int = 0,
    initial: Union[EIState, np.ndarray, None] = None,
) -> SkeletonSample:
    """
    Run the window chain for burn_in + steps transitions and keep the last `steps`.

    With psi, each kept transition (e, i) -> (e', j) also emits a count drawn
    from psi_(e,i,j).
    """
    if steps < 1 or burn_in < 0:
        raise ConfigError("simulate_skeleton needs steps >= 1 and burn_in >= 0")
    rng = replica_rng(seed)
    ke, ki = skeleton.shape
    cdf = np.cumsum(skeleton.matrix, axis=1).tolist()
    total = burn_in + steps
    moves = rng.random(total).tolist()
    emit_cdf = None
    if psi is not None:
        if psi.shape != skeleton.shape:
            raise ConfigError("Emission table and skeleton have different truncation boxes")
        emit_cdf = np.cumsum(psi.probs.reshape(ke * ki * ki, -1), axis=1).tolist()
        draws = rng.random(total).tolist()
    state = _start_index(skeleton, initial, rng)
    states = np.empty(steps, dtype=np.int64)
    emissions = np.empty(steps, dtype=np.int64) if psi is not None else None
    for n in range(total):
        row = cdf[state]
        nxt = min(bisect.bisect_right(row, moves[n] * row[-1]), len(row) - 1)
        if n >= burn_in:
            k = n - burn_in
            states[k] = nxt
            if emit_cdf is not None:
                e, i = divmod(state, ki)
                erow = emit_cdf[(e * ki + i) * ki + nxt % ki]
                emissions[k] = min(bisect.bisect_right(erow, draws[n] * erow[-1]), len(erow) - 1)
        state = nxt
    return SkeletonSample(states=np.column_stack(np.divmod(states, ki)), emissions=emissions)


def sample_endpoints(
    skeleton: SkeletonMatrix,
    steps: int,
    n_samples: int,
    seed: int = 0,
    initial: Optional[EIState] = None,
) -> EndpointSample:
    """Exact draws of the state after `steps` windows, from the matrix power of p."""
    start = np.zeros(skeleton.size)
    start[_start_index(skeleton, initial or EIState(), None)] = 1.0
    dist = start @ np.linalg.matrix_power(skeleton.matrix, int(steps))
    dist = np.maximum(dist, 0.0)
    dist /= dist.sum()
    rng = replica_rng(seed)
    flat = rng.choice(skeleton.size, size=n_samples, p=dist)
    ki = skeleton.shape[1]
    return EndpointSample(
        states=np.column_stack(np.divmod(flat, ki)),
        steps=int(steps),
        distribution=dist.reshape(skeleton.shape),
    )
