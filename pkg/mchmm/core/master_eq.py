"""
Numerical oracle: truncated forward Kolmogorov equations and moment ODEs.

States of the truncation box are indexed row-major, e outermost:
flat = e * Ki + i. Every module shares this order.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from mchmm.config import LEAK_TOLERANCE, ODE_ATOL, ODE_RTOL
from mchmm.core.errors import ConfigError, NumericError, TruncationError
from mchmm.core.model import EIState, EventKind, ModelParams, RateParams, TruncationConfig

logger = logging.getLogger(__name__)


@dataclass
class TransitionTensor:
    """p[(e,i),(e',i')] over one window, as a (Ke, Ki, Ke, Ki) array."""
    dt: float
    probs: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    @property
    def n_state(self) -> int:
        return self.probs.shape[1] - 1

    @property
    def matrix(self) -> np.ndarray:
        size = self.shape[0] * self.shape[1]
        return self.probs.reshape(size, size)

    @property
    def leakage(self) -> np.ndarray:
        """Mass lost past the box, per start state."""
        return 1.0 - self.probs.sum(axis=(2, 3))

    def to_frame(self) -> pd.DataFrame:
        return tensor_frame(self.probs, ["e", "i", "e'", "i'"])


@dataclass
class JointTransitionTensor:
    """p[(e,i),(e',i',y)] as a (Ke, Ki, Ke, Ki, M+1) array."""
    dt: float
    probs: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    @property
    def n_state(self) -> int:
        return self.probs.shape[1] - 1

    @property
    def m_obs(self) -> int:
        return self.probs.shape[-1] - 1

    def marginal(self) -> TransitionTensor:
        return TransitionTensor(dt=self.dt, probs=self.probs.sum(axis=-1))

    def to_frame(self) -> pd.DataFrame:
        return tensor_frame(self.probs, ["e", "i", "e'", "i'", "y"])


@dataclass
class MomentCurve:
    """Solution of the moment ODEs on a time grid."""
    times: np.ndarray
    names: tuple[str, ...]
    values: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def at_end(self) -> dict[str, float]:
        return {name: float(self.values[-1, k]) for k, name in enumerate(self.names)}

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=list(self.names))
        frame.insert(0, "t", self.times)
        return frame


def tensor_frame(probs: np.ndarray, columns: list[str]) -> pd.DataFrame:
    index = np.indices(probs.shape).reshape(probs.ndim, -1).T
    frame = pd.DataFrame(index, columns=columns)
    frame["prob"] = probs.ravel()
    return frame


def truncated_generator(params: RateParams, shape: tuple[int, int], m_obs: Optional[int] = None) -> np.ndarray:
    """
    Generator restricted to the box, with the full exit rate on the diagonal.

    With m_obs set, the state is (e, i, y) and isolations also advance y;
    jumps leaving the box are lost mass.
    """
    ke, ki = shape
    ky = 1 if m_obs is None else m_obs + 1
    size = ke * ki * ky
    gen = np.zeros((size, size))
    coef = params.rate_coefficients()
    for e in range(ke):
        for i in range(ki):
            rates = coef[:, 0] + coef[:, 1] * e + coef[:, 2] * i
            for y in range(ky):
                src = (e * ki + i) * ky + y
                for (kind, de, di), rate in zip(params.EVENTS, rates):
                    if rate <= 0.0:
                        continue
                    gen[src, src] -= rate
                    e2, i2 = e + de, i + di
                    y2 = y + 1 if (m_obs is not None and kind == EventKind.ISOLATION) else y
                    if 0 <= e2 < ke and 0 <= i2 < ki and y2 < ky:
                        gen[src, (e2 * ki + i2) * ky + y2] += rate
    return gen


def _forward(gen: np.ndarray, p0: np.ndarray, dt: float) -> np.ndarray:
    """Integrate dP/dt = P G from P(0) = p0 over [0, dt]."""
    if dt == 0:
        return p0.copy()
    rows, cols = p0.shape

    def rhs(_t, flat):
        return (flat.reshape(rows, cols) @ gen).ravel()

    sol = solve_ivp(rhs, (0.0, dt), p0.ravel(), method="RK45", atol=ODE_ATOL, rtol=ODE_RTOL)
    if not sol.success:
        raise TruncationError(f"Kolmogorov integration failed: {sol.message}")
    # round-off below zero
    return np.maximum(sol.y[:, -1].reshape(rows, cols), 0.0)


def _check_dt(dt: float) -> None:
    if not (dt >= 0 and math.isfinite(dt)):
        raise ConfigError(f"dt must be a nonnegative finite number, got {dt}")


def _report_leakage(leak: np.ndarray, max_leak: Optional[float]) -> None:
    worst = float(leak.max())
    if worst > LEAK_TOLERANCE:
        logger.warning(f"Truncation leaks up to {worst:.3g} of the mass in one window")
    if max_leak is not None and worst > max_leak:
        raise TruncationError(f"Leaked mass {worst:.3g} exceeds the allowed {max_leak:.3g}")


def solve_kolmogorov(
    params: RateParams,
    trunc: TruncationConfig,
    dt: float,
    max_leak: Optional[float] = None,
) -> TransitionTensor:
    """Raw window transition probabilities between truncated (e, i) states."""
    _check_dt(dt)
    shape = params.box_shape(trunc.n_state)
    size = shape[0] * shape[1]
    raw = _forward(truncated_generator(params, shape), np.eye(size), dt)
    tensor = TransitionTensor(dt=dt, probs=raw.reshape(shape + shape))
    _report_leakage(tensor.leakage, max_leak)
    return tensor


def solve_joint_kolmogorov(
    params: RateParams,
    trunc: TruncationConfig,
    dt: float,
    max_leak: Optional[float] = None,
) -> JointTransitionTensor:
    """Raw joint probabilities of the next state and the window's isolation count."""
    _check_dt(dt)
    shape = params.box_shape(trunc.n_state)
    ky = trunc.m_obs + 1
    size = shape[0] * shape[1]
    gen = truncated_generator(params, shape, trunc.m_obs)
    # start rows: (e, i, y=0) for each box state
    p0 = np.zeros((size, size * ky))
    p0[np.arange(size), np.arange(size) * ky] = 1.0
    raw = _forward(gen, p0, dt).reshape(shape + shape + (ky,))
    raw[joint_support(shape, trunc.m_obs) == 0] = 0.0
    tensor = JointTransitionTensor(dt=dt, probs=raw)
    _report_leakage(1.0 - raw.sum(axis=(2, 3, 4)), max_leak)
    return tensor


def joint_support(shape: tuple[int, int], m_obs: int) -> np.ndarray:
    """1 where (e,i) -> (e',i',y) is possible, i.e. i <= i' + y."""
    i = np.arange(shape[1])
    y = np.arange(m_obs + 1)
    ok = i[:, None, None] <= i[None, :, None] + y[None, None, :]
    return np.broadcast_to(
        ok[None, :, None, :, :], shape + shape + (m_obs + 1,)
    ).astype(np.int8)


def solve_moment_odes(
    params: RateParams,
    initial: EIState,
    horizon: float,
    n_points: int = 201,
) -> MomentCurve:
    """Integrate the closed linear moment system from the initial state."""
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ConfigError(f"Horizon must be positive, got {horizon}")
    a, b = params.moment_system()
    times = np.linspace(0.0, horizon, n_points)
    sol = solve_ivp(
        lambda _t, m: a @ m + b,
        (0.0, horizon),
        params.moment_initial(initial),
        method="RK45",
        t_eval=times,
        atol=ODE_ATOL,
        rtol=ODE_RTOL,
    )
    if not sol.success:
        raise NumericError(f"Moment integration failed: {sol.message}")
    return MomentCurve(times=sol.t, names=params.MOMENT_NAMES, values=sol.y.T)


def relaxation_rate(params: ModelParams) -> float:
    """Slowest decay rate of the first moments toward their limits."""
    lam, mu, alpha = params.lam, params.mu, params.alpha
    return (mu + alpha - math.sqrt((mu - alpha) ** 2 + 4 * alpha * lam)) / 2


def fit_decay_rate(curve: MomentCurve, name: str, limit: float, t_min: float, t_max: float) -> float:
    """Log-linear fit of |m(t) - limit| over [t_min, t_max]; returns the decay rate."""
    mask = (curve.times >= t_min) & (curve.times <= t_max)
    gap = np.abs(curve[name][mask] - limit)
    keep = gap > 0
    if keep.sum() < 2:
        raise ConfigError(f"Not enough points to fit the decay of {name}")
    slope, _ = np.polyfit(curve.times[mask][keep], np.log(gap[keep]), 1)
    return float(-slope)
