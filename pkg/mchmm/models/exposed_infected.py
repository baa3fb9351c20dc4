"""
Exposed-infected model (model 2).

Contacts of infected individuals and exogenous contamination create exposed
individuals; each exposed becomes infected after an exponential incubation,
and each infected is isolated at rate mu. Only isolations are observed.
"""

from mchmm.config import INIT_RANGES
from mchmm.core.model import ModelParams
from mchmm.core.moments import LimitMoments, invert_moments, limit_moments
from mchmm.models.base import ChainMoments, CompartmentModel, ModelParameter
from mchmm.models.registry import ModelRegistry


@ModelRegistry.register
class ExposedInfectedModel(CompartmentModel):
    """Two-compartment chain (E, I) with incubation."""

    id = "ei"
    aliases = ("2",)
    name = "Exposed-infected"
    description = "Exposure at rate lambda*i + nu, incubation at rate alpha*e, isolation at rate mu*i."
    params_type = ModelParams

    @property
    def parameters(self) -> list[ModelParameter]:
        return [
            ModelParameter(
                name="lambda",
                label="Contact rate",
                init_range=INIT_RANGES["lambda"],
                help_text="Exposures caused per infected individual per unit time",
            ),
            ModelParameter(
                name="mu",
                label="Isolation rate",
                init_range=INIT_RANGES["mu"],
                help_text="Inverse of the mean infectious period",
            ),
            ModelParameter(
                name="alpha",
                label="Incubation rate",
                init_range=INIT_RANGES["alpha"],
                help_text="Inverse of the mean incubation period",
            ),
            ModelParameter(
                name="nu",
                label="Exogenous rate",
                init_range=INIT_RANGES["nu"],
                help_text="Contaminations from outside the population",
            ),
        ]

    def limit_moments(self, params: ModelParams) -> LimitMoments:
        return limit_moments(params)

    def invert(self, moments: LimitMoments) -> ModelParams:
        return invert_moments(moments)

    def moments_from_chain(self, summary: dict[str, tuple[float, float]], dt: float) -> ChainMoments:
        moments = LimitMoments(
            e_star=summary["E"][0],
            i_star=summary["I"][0],
            r_star=summary["EI"][0],
            n_star=summary["Y"][0] / dt,
        )
        half = {
            "e_star": summary["E"][1],
            "i_star": summary["I"][1],
            "r_star": summary["EI"][1],
            "n_star": summary["Y"][1] / dt,
        }
        return ChainMoments(values=moments, half_widths=half)
