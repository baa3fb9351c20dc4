"""Domain types and transition rates of the exposed-infected chain."""

from dataclasses import dataclass
from enum import IntEnum
from typing import ClassVar, Iterator

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from mchmm.core.errors import ConfigError


class EventKind(IntEnum):
    """Kinds of jumps a compartment chain can make."""
    EXPOSURE = 0
    INCUBATION = 1
    ISOLATION = 2
    BIRTH = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "EventKind":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ConfigError(f"Unknown event kind: {label}") from None


@dataclass(frozen=True)
class EIState:
    """Number of exposed (e) and infected (i) individuals."""
    e: int = 0
    i: int = 0

    def __post_init__(self):
        for name in ("e", "i"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 0:
                raise ConfigError(f"State component {name} must be a nonnegative integer, got {value!r}")

    def within(self, shape: tuple[int, int]) -> bool:
        return self.e < shape[0] and self.i < shape[1]


@dataclass(frozen=True)
class AugmentedState(EIState):
    """Hidden state of the HMM: (e, i) at the previous window end and the current infected count j."""
    j: int = 0

    def __post_init__(self):
        super().__post_init__()
        if isinstance(self.j, bool) or not isinstance(self.j, (int, np.integer)) or self.j < 0:
            raise ConfigError(f"State component j must be a nonnegative integer, got {self.j!r}")

    def within(self, shape: tuple[int, int]) -> bool:
        return super().within(shape) and self.j < shape[1]

    @property
    def origin(self) -> EIState:
        return EIState(self.e, self.i)


class TruncationConfig(BaseModel):
    """Truncation bounds: states live in {0..n_state}^2, counts in {0..m_obs}."""
    model_config = ConfigDict(frozen=True)

    n_state: int = Field(3, ge=1)
    m_obs: int = Field(2, ge=1)


class RateParams(BaseModel):
    """
    Parameters of a chain whose event rates are affine in (e, i).

    Subclasses declare EVENTS as (kind, delta_e, delta_i) and return the
    matching rate coefficients (constant, per-exposed, per-infected).
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    EVENTS: ClassVar[tuple[tuple[EventKind, int, int], ...]] = ()
    MOMENT_NAMES: ClassVar[tuple[str, ...]] = ()

    def rate_coefficients(self) -> np.ndarray:
        raise NotImplementedError

    @classmethod
    def box_shape(cls, n_state: int) -> tuple[int, int]:
        return (n_state + 1, n_state + 1)

    def moment_system(self) -> tuple[np.ndarray, np.ndarray]:
        """Linear moment ODE dm/dt = A m + b over MOMENT_NAMES."""
        raise NotImplementedError

    def moment_initial(self, initial: EIState) -> np.ndarray:
        raise NotImplementedError

    @property
    def stable(self) -> bool:
        raise NotImplementedError

    def rates_at(self, e: int, i: int) -> np.ndarray:
        coef = self.rate_coefficients()
        return coef[:, 0] + coef[:, 1] * e + coef[:, 2] * i

    def as_dict(self) -> dict[str, float]:
        return self.model_dump(by_alias=True)

    @classmethod
    def parse(cls, values: dict) -> "RateParams":
        """Validate a mapping, reporting failures as ConfigError."""
        try:
            return cls.model_validate(values)
        except ValidationError as exc:
            raise ConfigError(f"Invalid {cls.__name__}: {exc}") from exc


class ModelParams(RateParams):
    """Rates of the exposed-infected chain."""
    lam: float = Field(alias="lambda", ge=0, allow_inf_nan=False)
    mu: float = Field(ge=0, allow_inf_nan=False)
    alpha: float = Field(ge=0, allow_inf_nan=False)
    nu: float = Field(ge=0, allow_inf_nan=False)

    EVENTS: ClassVar[tuple[tuple[EventKind, int, int], ...]] = (
        (EventKind.EXPOSURE, 1, 0),
        (EventKind.INCUBATION, -1, 1),
        (EventKind.ISOLATION, 0, -1),
    )
    MOMENT_NAMES: ClassVar[tuple[str, ...]] = ("E", "I", "Y", "E2", "EI", "I2")

    def rate_coefficients(self) -> np.ndarray:
        return np.array([
            [self.nu, 0.0, self.lam],
            [0.0, self.alpha, 0.0],
            [0.0, 0.0, self.mu],
        ])

    @property
    def stable(self) -> bool:
        return self.lam < self.mu

    def moment_system(self) -> tuple[np.ndarray, np.ndarray]:
        lam, mu, alpha, nu = self.lam, self.mu, self.alpha, self.nu
        # columns: E, I, Y, E2, EI, I2
        a = np.array([
            [-alpha, lam, 0, 0, 0, 0],
            [alpha, -mu, 0, 0, 0, 0],
            [0, mu, 0, 0, 0, 0],
            [2 * nu + alpha, lam, 0, -2 * alpha, 2 * lam, 0],
            [-alpha, nu, 0, alpha, -(mu + alpha), lam],
            [alpha, mu, 0, 0, 2 * alpha, -2 * mu],
        ], dtype=float)
        b = np.array([nu, 0, 0, nu, 0, 0], dtype=float)
        return a, b

    def moment_initial(self, initial: EIState) -> np.ndarray:
        e, i = initial.e, initial.i
        return np.array([e, i, 0, e * e, e * i, i * i], dtype=float)


def event_rates(state: EIState, params: ModelParams) -> tuple[float, float, float]:
    """Rates of (exposure, incubation, isolation) out of a state."""
    return (
        params.lam * state.i + params.nu,
        params.alpha * state.e,
        params.mu * state.i,
    )


def generator_entry(src: EIState, dst: EIState, params: RateParams) -> float:
    """Off-diagonal generator entry, or minus the total exit rate when src == dst."""
    rates = params.rates_at(src.e, src.i)
    if src == dst:
        return -float(rates.sum())
    total = 0.0
    for (_, de, di), rate in zip(params.EVENTS, rates):
        if src.e + de == dst.e and src.i + di == dst.i:
            total += float(rate)
    return total


def box_states(shape: tuple[int, int]) -> Iterator[EIState]:
    """States of a truncation box in row-major order (flat index e * Ki + i)."""
    for e in range(shape[0]):
        for i in range(shape[1]):
            yield EIState(e, i)


def flat_index(e: int, i: int, shape: tuple[int, int]) -> int:
    return e * shape[1] + i
