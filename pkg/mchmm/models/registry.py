"""Model registry with decorator-based registration."""

from typing import Type, Optional

from mchmm.core.errors import ConfigError
from mchmm.models.base import CompartmentModel


class ModelRegistry:
    """Registry for compartment models, addressable by id or alias."""

    _models: dict[str, CompartmentModel] = {}
    _aliases: dict[str, str] = {}

    @classmethod
    def register(cls, model_class: Type[CompartmentModel]) -> Type[CompartmentModel]:
        """
        Decorator to register a compartment model.

        Usage:
            @ModelRegistry.register
            class MyModel(CompartmentModel):
                ...
        """
        instance = model_class()
        if not instance.id:
            raise ValueError(f"Model {model_class.__name__} must have an 'id' attribute")
        cls._models[instance.id] = instance
        for alias in instance.aliases:
            cls._aliases[alias] = instance.id
        return model_class

    @classmethod
    def get(cls, model_id: str) -> Optional[CompartmentModel]:
        """Get a model by id or alias."""
        key = str(model_id).lower()
        return cls._models.get(cls._aliases.get(key, key))

    @classmethod
    def require(cls, model_id: str) -> CompartmentModel:
        """Get a model by id or alias, raising ConfigError when unknown."""
        model = cls.get(model_id)
        if model is None:
            known = ", ".join(sorted(set(cls._models) | set(cls._aliases)))
            raise ConfigError(f"Unknown model '{model_id}' (known: {known})")
        return model
