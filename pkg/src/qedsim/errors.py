"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ContractError(ValueError):
    """An input violates a structural precondition (e.g. monotonicity)."""


class UnsupportedConstructionError(NotImplementedError):
    """The requested operation is not available for this model/construction."""


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")
