"""Exception hierarchy shared by every subpackage."""


class NoisyAlignError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(NoisyAlignError, ValueError):
    pass


class DomainError(NoisyAlignError, ValueError):
    pass


class DegenerateVectorError(DomainError):
    pass


class InstabilityError(NoisyAlignError, ArithmeticError):
    pass


class VocabularyError(NoisyAlignError, ValueError):
    pass


class ContractError(NoisyAlignError, ValueError):
    """An input violates a documented precondition (unit norm, weight range, ...)."""


class TrainingDivergenceError(NoisyAlignError, ArithmeticError):
    pass


class StandardizationError(NoisyAlignError, ValueError):
    pass


class PruningContractError(NoisyAlignError, ValueError):
    pass


class DegenerateSplitError(NoisyAlignError, ValueError):
    pass


class ProviderError(NoisyAlignError, RuntimeError):
    """A shot-boundary or caption provider failed on one input."""


class FormatError(NoisyAlignError, ValueError):
    """A binary or JSON file does not match its declared layout."""


class ConfigError(NoisyAlignError, ValueError):
    pass
