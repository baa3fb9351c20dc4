# Compartment models
from mchmm.models.registry import ModelRegistry
from mchmm.models.base import CompartmentModel

# Import models to trigger registration
from mchmm.models import exposed_infected
from mchmm.models import lbdi

__all__ = ["ModelRegistry", "CompartmentModel"]
