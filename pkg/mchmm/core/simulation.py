"""Exact (Gillespie) simulation of compartment chains and the skeleton sampler."""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from mchmm.core.errors import ConfigError
from mchmm.core.model import EIState, EventKind, RateParams
from mchmm.core.parallel import chunk_ranges, replica_rng, run_tasks, worker_count

logger = logging.getLogger(__name__)

_BLOCK = 4096


@dataclass
class Trajectory:
    """Event times, kinds and post-event states of one path on [0, horizon]."""
    initial: EIState
    horizon: float
    times: np.ndarray
    kinds: np.ndarray
    e: np.ndarray
    i: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @property
    def cumulative_isolations(self) -> int:
        return int(np.count_nonzero(self.kinds == EventKind.ISOLATION))

    @property
    def final_state(self) -> EIState:
        if len(self.times) == 0:
            return self.initial
        return EIState(int(self.e[-1]), int(self.i[-1]))

    def events(self) -> Iterator[tuple[float, EventKind, EIState]]:
        for t, k, e, i in zip(self.times, self.kinds, self.e, self.i):
            yield float(t), EventKind(int(k)), EIState(int(e), int(i))

    def states_at(self, times: np.ndarray) -> np.ndarray:
        """(e, i) right after all events at or before each time."""
        idx = np.searchsorted(self.times, times, side="right") - 1
        out = np.empty((len(idx), 2), dtype=np.int64)
        before = idx < 0
        out[before] = (self.initial.e, self.initial.i)
        out[~before, 0] = self.e[idx[~before]]
        out[~before, 1] = self.i[idx[~before]]
        return out

    def to_frame(self) -> pd.DataFrame:
        """Rows t,kind,e,i framed by a 'start' row at t=0 and an 'end' row at the horizon."""
        start = pd.DataFrame({"t": [0.0], "kind": ["start"], "e": [self.initial.e], "i": [self.initial.i]})
        body = pd.DataFrame({
            "t": self.times,
            "kind": [EventKind(int(k)).label for k in self.kinds],
            "e": self.e,
            "i": self.i,
        })
        final = self.final_state
        end = pd.DataFrame({"t": [self.horizon], "kind": ["end"], "e": [final.e], "i": [final.i]})
        return pd.concat([start, body, end], ignore_index=True)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "Trajectory":
        missing = {"t", "kind", "e", "i"} - set(frame.columns)
        if missing:
            raise ConfigError(f"Trajectory table is missing columns: {sorted(missing)}")
        start = frame[frame["kind"] == "start"]
        end = frame[frame["kind"] == "end"]
        if len(start) != 1 or len(end) != 1:
            raise ConfigError("Trajectory table needs exactly one 'start' and one 'end' row")
        body = frame[~frame["kind"].isin(["start", "end"])]
        return cls(
            initial=EIState(int(start["e"].iloc[0]), int(start["i"].iloc[0])),
            horizon=float(end["t"].iloc[0]),
            times=body["t"].to_numpy(dtype=float),
            kinds=np.array([EventKind.from_label(k) for k in body["kind"]], dtype=np.int8),
            e=body["e"].to_numpy(dtype=np.int64),
            i=body["i"].to_numpy(dtype=np.int64),
        )


@dataclass
class ObservationSeries:
    """Isolations counted in consecutive windows of width dt."""
    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 1:
            raise ConfigError("Observation values must be one-dimensional")
        if len(self.values) and self.values.min() < 0:
            raise ConfigError("Observation counts must be nonnegative")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"Observation window must be positive, got {self.dt}")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def total(self) -> int:
        return int(self.values.sum())

    @property
    def max(self) -> int:
        return int(self.values.max()) if len(self.values) else 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"n": np.arange(1, len(self.values) + 1), "y": self.values})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, dt: float) -> "ObservationSeries":
        if "y" not in frame.columns:
            raise ConfigError("Observation table needs a 'y' column")
        if "n" in frame.columns:
            frame = frame.sort_values("n")
        return cls(dt=dt, values=frame["y"].to_numpy(dtype=np.int64))


def _check_horizon(horizon: float) -> None:
    try:
        value = float(horizon)
    except (TypeError, ValueError):
        raise ConfigError(f"Horizon must be a number, got {horizon!r}") from None
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(f"Horizon must be a positive finite number, got {horizon!r}")


def iter_events(
    params: RateParams,
    initial: EIState,
    horizon: float,
    rng: np.random.Generator,
) -> Iterator[tuple[float, int, int, int]]:
    """Yield (time, event index, e, i) for each jump up to the horizon."""
    coef = params.rate_coefficients()
    a, b, c = coef[:, 0].tolist(), coef[:, 1].tolist(), coef[:, 2].tolist()
    deltas = [(de, di) for _, de, di in params.EVENTS]
    n_events = len(deltas)
    e, i = initial.e, initial.i
    t = 0.0
    waits = rng.standard_exponential(_BLOCK)
    picks = rng.random(_BLOCK)
    pos = 0
    while True:
        rates = [a[k] + b[k] * e + c[k] * i for k in range(n_events)]
        total = sum(rates)
        if total <= 0.0:
            return
        if pos == _BLOCK:
            waits = rng.standard_exponential(_BLOCK)
            picks = rng.random(_BLOCK)
            pos = 0
        t += waits[pos] / total
        if t > horizon:
            return
        u = picks[pos] * total
        pos += 1
        k = 0
        acc = rates[0]
        while u >= acc and k < n_events - 1:
            k += 1
            acc += rates[k]
        while rates[k] <= 0.0:
            k -= 1
        e += deltas[k][0]
        i += deltas[k][1]
        yield t, k, e, i


def simulate_with_rng(
    params: RateParams,
    initial: EIState,
    horizon: float,
    rng: np.random.Generator,
) -> Trajectory:
    kinds_of = [int(kind) for kind, _, _ in params.EVENTS]
    times, kinds, es, is_ = [], [], [], []
    for t, k, e, i in iter_events(params, initial, horizon, rng):
        times.append(t)
        kinds.append(kinds_of[k])
        es.append(e)
        is_.append(i)
    return Trajectory(
        initial=initial,
        horizon=float(horizon),
        times=np.array(times, dtype=float),
        kinds=np.array(kinds, dtype=np.int8),
        e=np.array(es, dtype=np.int64),
        i=np.array(is_, dtype=np.int64),
    )


def simulate(params: RateParams, initial: EIState, horizon: float, seed: int) -> Trajectory:
    """Exact trajectory on [0, horizon]; the same seed reproduces it bit for bit."""
    _check_horizon(horizon)
    traj = simulate_with_rng(params, initial, horizon, replica_rng(seed))
    logger.debug(f"Simulated {len(traj)} events up to t={horizon}")
    return traj


def skeleton_sample(traj: Trajectory, dt: float) -> tuple[np.ndarray, ObservationSeries]:
    """
    Sample the path on the grid n*dt.

    Returns the (T+1, 2) array of states at t_0..t_T and the isolation
    counts Y_n over the windows (t_{n-1}, t_n].
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ConfigError(f"dt must be positive, got {dt}")
    n_windows = int(math.floor(traj.horizon / dt + 1e-9))
    edges = dt * np.arange(n_windows + 1)
    states = traj.states_at(edges)
    iso_times = traj.times[traj.kinds == EventKind.ISOLATION]
    cumulative = np.searchsorted(iso_times, edges, side="right")
    return states, ObservationSeries(dt=dt, values=np.diff(cumulative))


@dataclass
class MonteCarloMoments:
    """Endpoint samples of independent replicas and their moment estimates."""
    horizon: float
    e_end: np.ndarray
    i_end: np.ndarray
    isolations: np.ndarray

    @property
    def n_mc(self) -> int:
        return len(self.e_end)

    def samples(self) -> dict[str, np.ndarray]:
        e = self.e_end.astype(float)
        i = self.i_end.astype(float)
        return {
            "E": e,
            "I": i,
            "EI": e * i,
            "I2": i * i,
            "N": self.isolations / self.horizon,
        }

    def estimates(self, z: float = 1.96) -> dict[str, tuple[float, float]]:
        """Mean and CI half-width (z * standard error) per moment."""
        out = {}
        for name, values in self.samples().items():
            mean = float(values.mean())
            half = z * float(values.std(ddof=1)) / math.sqrt(len(values))
            out[name] = (mean, half)
        return out

    @property
    def n_star_samples(self) -> np.ndarray:
        return self.isolations / self.horizon


def _endpoint_chunk(task: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    params, initial, horizon, seed, start, stop = task
    iso_index = [k for k, (kind, _, _) in enumerate(params.EVENTS) if kind == EventKind.ISOLATION]
    size = stop - start
    e_end = np.empty(size, dtype=np.int64)
    i_end = np.empty(size, dtype=np.int64)
    counts = np.zeros(size, dtype=np.int64)
    for slot, replica in enumerate(range(start, stop)):
        e, i = initial.e, initial.i
        rng = replica_rng(seed, replica)
        for _, k, e, i in iter_events(params, initial, horizon, rng):
            if k in iso_index:
                counts[slot] += 1
        e_end[slot] = e
        i_end[slot] = i
    return e_end, i_end, counts


def mc_moments(
    params: RateParams,
    initial: EIState,
    horizon: float,
    n_mc: int,
    seed: int,
    workers: Optional[int] = None,
) -> MonteCarloMoments:
    """Endpoint moments from n_mc replicas; results do not depend on the worker count."""
    _check_horizon(horizon)
    if n_mc < 2:
        raise ConfigError(f"n_mc must be at least 2, got {n_mc}")
    n_workers = worker_count(workers)
    tasks = [
        (params, initial, float(horizon), seed, start, stop)
        for start, stop in chunk_ranges(n_mc, n_workers * 4)
    ]
    logger.info(f"Running {n_mc} replicas to t={horizon} on {n_workers} workers")
    parts = run_tasks(_endpoint_chunk, tasks, n_workers)
    return MonteCarloMoments(
        horizon=float(horizon),
        e_end=np.concatenate([p[0] for p in parts]),
        i_end=np.concatenate([p[1] for p in parts]),
        isolations=np.concatenate([p[2] for p in parts]),
    )
