"""Base class for compartment models."""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from mchmm.core.model import EIState, RateParams, TruncationConfig


@dataclass
class ModelParameter:
    """Definition of one rate parameter of a model."""
    name: str
    label: str
    init_range: tuple[float, float]
    help_text: str = ""


@dataclass
class ChainMoments:
    """Stationary moments read off a simulated chain, with CI half-widths."""
    values: Any
    half_widths: dict[str, float]


class CompartmentModel(ABC):
    """Abstract base class for compartment models estimated through the HMM pipeline."""

    # Override these in subclasses
    id: str = ""
    aliases: tuple[str, ...] = ()
    name: str = ""
    description: str = ""
    params_type: type[RateParams] = RateParams

    @property
    @abstractmethod
    def parameters(self) -> list[ModelParameter]:
        """Return the rate parameters, in canonical order."""
        pass

    @abstractmethod
    def limit_moments(self, params: RateParams) -> Any:
        """Closed-form stationary moments of the model."""
        pass

    @abstractmethod
    def invert(self, moments: Any) -> RateParams:
        """Rates reproducing the given stationary moments."""
        pass

    @abstractmethod
    def moments_from_chain(self, summary: dict[str, tuple[float, float]], dt: float) -> ChainMoments:
        """
        Stationary moments from a simulated skeleton chain.

        Args:
            summary: mean and CI half-width per chain statistic (E, I, EI, I2, Y)
            dt: observation window, to turn mean counts into rates

        Returns:
            The model's moment vector with half-widths
        """
        pass

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.parameters]

    @property
    def n_params(self) -> int:
        return len(self.parameters)

    def make_params(self, values: dict[str, float]) -> RateParams:
        return self.params_type.parse(values)

    def box_shape(self, trunc: TruncationConfig) -> tuple[int, int]:
        return self.params_type.box_shape(trunc.n_state)

    def default_init_ranges(self) -> dict[str, tuple[float, float]]:
        return {p.name: p.init_range for p in self.parameters}

    def draw_params(self, ranges: dict[str, tuple[float, float]], rng: np.random.Generator) -> RateParams:
        """Independent uniform draw of each parameter within its range."""
        values = {name: float(rng.uniform(*ranges[name])) for name in self.param_names}
        return self.make_params(values)

    def initial_state(self, e0: int, i0: int) -> EIState:
        return EIState(e0, i0)

    def to_dict(self, ranges: Optional[dict[str, tuple[float, float]]] = None) -> dict[str, Any]:
        """Convert model info to a dictionary for reports."""
        ranges = ranges or self.default_init_ranges()
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "k": self.n_params,
            "parameters": [
                {
                    "name": p.name,
                    "label": p.label,
                    "init_range": list(ranges.get(p.name, p.init_range)),
                    "help_text": p.help_text,
                }
                for p in self.parameters
            ],
        }
