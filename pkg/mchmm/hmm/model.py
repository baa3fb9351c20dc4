"""
Structured hidden Markov model over augmented states (e, i, j).

The hidden chain is X_n = (E_{n-1}, I_{n-1}, I_n). A transition
(e,i,j) -> (e',i',j') is only possible when i' = j, so the transition
matrix is stored compressed as q[e, i, j, e', j'] (target (e', j, j')).
Forward and backward passes work on this compressed form, which costs
O((N+1)^5) per step instead of O((N+1)^6).
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

import numpy as np

from mchmm.core.errors import ConfigError, ObservationRangeError, ZeroLikelihoodError
from mchmm.core.model import AugmentedState
from mchmm.core.simulation import ObservationSeries
from mchmm.hmm.skeleton import EmissionTable, SkeletonMatrix

logger = logging.getLogger(__name__)


@dataclass
class HmmModel:
    """The triple (Q, psi, rho) built from a skeleton p and initial law pi."""
    skeleton: SkeletonMatrix
    psi: EmissionTable
    pi: np.ndarray
    q: np.ndarray
    rho: np.ndarray
    marg: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.skeleton.shape

    @property
    def n_state(self) -> int:
        return self.skeleton.n_state

    @property
    def m_obs(self) -> int:
        return self.psi.m_obs

    @property
    def n_hidden(self) -> int:
        ke, ki = self.shape
        return ke * ki * ki

    @cached_property
    def kernel(self) -> np.ndarray:
        """q regrouped per shared coordinate: kernel[j] maps (e,i) -> (e',j')."""
        ke, ki = self.shape
        return self.q.transpose(2, 0, 1, 3, 4).reshape(ki, ke * ki, ke * ki)

    def hidden_states(self) -> Iterator[AugmentedState]:
        """Hidden triples in flat order ((e * Ki) + i) * Ki + j."""
        ke, ki = self.shape
        for e, i, j in itertools.product(range(ke), range(ki), range(ki)):
            yield AugmentedState(e, i, j)

    def _check(self, state: AugmentedState) -> None:
        if not state.within(self.shape):
            raise ConfigError(f"{state} lies outside the truncation box {self.shape}")

    def transition(self, src: AugmentedState, dst: AugmentedState) -> float:
        """Q entry between two triples; zero unless dst.i == src.j."""
        self._check(src)
        self._check(dst)
        if dst.i != src.j:
            return 0.0
        return float(self.q[src.e, src.i, src.j, dst.e, dst.j])

    def initial(self, state: AugmentedState) -> float:
        self._check(state)
        return float(self.rho[state.e, state.i, state.j])

    def emission(self, state: AugmentedState, y: int) -> float:
        self._check(state)
        return float(self.psi.probs[state.e, state.i, state.j, y])

    def dense_q(self) -> np.ndarray:
        """Full (n_hidden x n_hidden) transition matrix, zeros included."""
        ke, ki = self.shape
        dense = np.zeros((ke, ki, ki, ke, ki, ki))
        for j in range(ki):
            dense[:, :, j, :, j, :] = self.q[:, :, j, :, :]
        return dense.reshape(self.n_hidden, self.n_hidden)

    def emissions_for(self, values: np.ndarray) -> np.ndarray:
        """psi evaluated at each observation, shape (T, Ke, Ki, Ki)."""
        return np.moveaxis(self.psi.probs[..., values], -1, 0)


def build_hmm(skeleton: SkeletonMatrix, psi: EmissionTable, pi: np.ndarray) -> HmmModel:
    """
    Q[(e,i,j),(e',j,j')] = p[(e',j),(.,j')] p[(e,i),(e',j)] / p[(e,i),(.,j)]
    and rho[e,i,j] = p[(e,i),(.,j)] pi[e,i].

    Triples with p[(e,i),(.,j)] = 0 are unreachable; their row is a point
    mass on (0, j, j).
    """
    pi = np.asarray(pi, dtype=float)
    if pi.shape != skeleton.shape:
        raise ConfigError(f"Initial law has shape {pi.shape}, expected {skeleton.shape}")
    if psi.shape != skeleton.shape:
        raise ConfigError("Emission table and skeleton have different truncation boxes")
    if (pi < 0).any() or not math.isclose(pi.sum(), 1.0, abs_tol=1e-9):
        raise ConfigError("Initial law must be a probability distribution")
    p = skeleton.probs
    # marg[e, i, j] = sum over e' of p[(e,i),(e',j)]
    marg = p.sum(axis=2)
    p_ijd = p.transpose(0, 1, 3, 2)
    numer = p_ijd[..., None] * marg.transpose(1, 0, 2)[None, None]
    reachable = marg > 0
    q = np.zeros_like(numer)
    q[reachable] = numer[reachable] / marg[reachable][:, None, None]
    a, b, c = np.nonzero(~reachable)
    q[a, b, c, 0, c] = 1.0
    rho = marg * pi[..., None]
    return HmmModel(skeleton=skeleton, psi=psi, pi=pi, q=q, rho=rho, marg=marg)


@dataclass
class ForwardBackward:
    """Scaled forward/backward variables; alpha sums to one at every t."""
    alpha: np.ndarray
    beta: np.ndarray
    scale: np.ndarray
    log_likelihood: float

    @property
    def gamma(self) -> np.ndarray:
        return self.alpha * self.beta


def check_observations(h: HmmModel, obs: ObservationSeries) -> np.ndarray:
    values = np.asarray(obs.values, dtype=np.int64)
    if len(values) == 0:
        raise ConfigError("Observation series is empty")
    if values.max() > h.m_obs:
        raise ObservationRangeError(
            f"Observed count {int(values.max())} exceeds the emission bound M={h.m_obs}"
        )
    return values


def forward_pass(h: HmmModel, emissions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ke, ki = h.shape
    size = ke * ki
    n_steps = len(emissions)
    alpha = np.empty((n_steps, ke, ki, ki))
    scale = np.empty(n_steps)
    kernel = h.kernel
    current = h.rho * emissions[0]
    for t in range(n_steps):
        if t > 0:
            prev = alpha[t - 1].transpose(2, 0, 1).reshape(ki, 1, size)
            current = (prev @ kernel).reshape(ki, ke, ki).transpose(1, 0, 2) * emissions[t]
        total = current.sum()
        if not total > 0:
            raise ZeroLikelihoodError(f"Observation {t + 1} has probability zero under the model")
        scale[t] = total
        alpha[t] = current / total
    return alpha, scale


def backward_pass(h: HmmModel, emissions: np.ndarray, scale: np.ndarray) -> np.ndarray:
    ke, ki = h.shape
    size = ke * ki
    n_steps = len(emissions)
    beta = np.empty((n_steps, ke, ki, ki))
    beta[-1] = 1.0
    kernel = h.kernel
    for t in range(n_steps - 2, -1, -1):
        weight = (emissions[t + 1] * beta[t + 1]).transpose(1, 0, 2).reshape(ki, size, 1)
        back = (kernel @ weight).reshape(ki, ke, ki).transpose(1, 2, 0)
        beta[t] = back / scale[t + 1]
    return beta


def forward_backward(h: HmmModel, obs: ObservationSeries) -> ForwardBackward:
    values = check_observations(h, obs)
    emissions = h.emissions_for(values)
    alpha, scale = forward_pass(h, emissions)
    beta = backward_pass(h, emissions, scale)
    return ForwardBackward(
        alpha=alpha,
        beta=beta,
        scale=scale,
        log_likelihood=math.fsum(np.log(scale)),
    )


def log_likelihood(h: HmmModel, obs: ObservationSeries) -> float:
    """Sum of the log scaling constants of the forward pass."""
    values = check_observations(h, obs)
    _, scale = forward_pass(h, h.emissions_for(values))
    return math.fsum(np.log(scale))


def xi_at(h: HmmModel, fb: ForwardBackward, obs: ObservationSeries, t: int) -> np.ndarray:
    """Posterior of the transition between steps t and t+1, compressed like q."""
    y_next = int(obs.values[t + 1])
    weight = h.psi.probs[..., y_next] * fb.beta[t + 1] / fb.scale[t + 1]
    # weight[e', j, j'] aligned with q[e, i, j, e', j']
    return fb.alpha[t][..., None, None] * h.q * weight.transpose(1, 0, 2)[None, None]


def forward_backward_cost(n_state: int, n_steps: int = 1) -> int:
    """Multiply-adds of the compressed recursions: 2 passes of (N+1) products of (N+1)^2 x (N+1)^2."""
    k = n_state + 1
    return 2 * n_steps * k * (k * k) ** 2
